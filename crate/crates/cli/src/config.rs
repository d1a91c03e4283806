//! Pipeline configuration loaded from `--config <json>`.
//!
//! Every field has a default, so a config file only lists what it changes.
//! All randomness derives from explicit seeds: the master seed (overridable
//! with `--seed`) and optional per-stage seeds that otherwise derive from it.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use lesion_core::evaluation::FoldScheme;
use lesion_core::gbt::GbtConfig;
use lesion_core::imagecore::SourceTag;
use lesion_core::shallow_cnn::TrainConfig;
use lesion_core::synthesizer::RenderRegion;
use lesion_core::{io, rng};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub master: u64,
    pub shallow_train: Option<u64>,
    pub gbt: Option<u64>,
}

const SHALLOW_STREAM: u64 = 1;
const GBT_STREAM: u64 = 2;

impl Seeds {
    pub fn shallow(&self) -> u64 {
        self.shallow_train
            .unwrap_or_else(|| rng::derive_seed(self.master, SHALLOW_STREAM))
    }

    pub fn gbt(&self) -> u64 {
        self.gbt.unwrap_or_else(|| rng::derive_seed(self.master, GBT_STREAM))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub weights: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seeds: Seeds,
    /// The shallow trainer's `rng_seed` is replaced by `seeds.shallow()`.
    pub shallow: TrainConfig,
    pub pairs_per_image: usize,
    /// Cases (not images) held out for shallow-model validation.
    pub validation_cases: usize,
    pub region: RenderRegion,
    pub window_step: usize,
    /// The boosted trees' `rng_seed` is replaced by `seeds.gbt()`.
    pub gbt: GbtConfig,
    pub folds: FoldScheme,
    pub threshold: f64,
    /// Sources to extract or evaluate; all available when absent.
    pub sources: Option<Vec<SourceTag>>,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seeds: Seeds::default(),
            shallow: TrainConfig::default(),
            pairs_per_image: 2500,
            validation_cases: 5,
            region: RenderRegion::Crop,
            window_step: 1,
            gbt: GbtConfig::default(),
            folds: FoldScheme::LeaveOneOut,
            threshold: 0.5,
            sources: None,
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(PipelineConfig::default()),
            Some(p) => io::read_json(p).with_context(|| format!("reading config {}", p.display())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: PipelineConfig =
            serde_json::from_str(r#"{"threshold": 0.75, "folds": "stratified:10", "gbt": {"n_trees": 31}}"#).unwrap();
        assert_eq!(cfg.threshold, 0.75);
        assert_eq!(cfg.folds, FoldScheme::Stratified { k: 10 });
        assert_eq!(cfg.gbt.n_trees, 31);
        assert_eq!(cfg.gbt.max_depth, 3);
        assert_eq!(cfg.pairs_per_image, 2500);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"treshold": 1}"#).is_err());
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let s = Seeds::default();
        assert_ne!(s.shallow(), s.gbt());
        assert_eq!(s.shallow(), Seeds::default().shallow());
        let explicit = Seeds {
            gbt: Some(9),
            ..Seeds::default()
        };
        assert_eq!(explicit.gbt(), 9);
    }

    #[test]
    fn config_roundtrip() {
        let cfg = PipelineConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&json).unwrap(), cfg);
    }
}
