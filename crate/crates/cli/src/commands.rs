//! Argument definitions and one function per subcommand.
//!
//! Every command writes into its `--out` directory under an advisory lock,
//! writes each file atomically and prints a one-line JSON summary.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lesion_core::deep_features::{case_feature_vector, ResNet50, ResNetWeights, FEATURES_PER_VIEW};
use lesion_core::evaluation::{run_experiment, EvalReport, ExperimentConfig, FeatureTable, FoldScheme};
use lesion_core::gbt::{ClassWeights, GbtConfig, Matrix};
use lesion_core::imagecore::{self, ImageGrid, Label, SourceTag, ViewName, PATCH_SIDE};
use lesion_core::shallow_cnn::{self, PatchPair, ShallowCnnModel, TrainConfig};
use lesion_core::synthesizer::{self, RenderRegion, TumorMask};
use lesion_core::{io, par, rng, Error};

use crate::config::PipelineConfig;
use crate::fixture::{self, FixtureSpec, FixtureTask};
use crate::manifest::{file_stem, Annotation, LoadedManifest, ManifestCase, ManifestView, PatchEntry, PatchIndex};
use crate::{CliError, CliResult, OutputLock};

#[derive(Debug, Parser)]
#[command(
    name = "lesion",
    version,
    about = "Lesion patch pipeline: preprocess, synthesize, extract, evaluate"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `seeds.master` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Pipeline config (JSON); omitted fields keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegionArg {
    Crop,
    Full,
}

impl From<RegionArg> for RenderRegion {
    fn from(r: RegionArg) -> Self {
        match r {
            RegionArg::Crop => RenderRegion::Crop,
            RegionArg::Full => RenderRegion::Full,
        }
    }
}

fn parse_source(s: &str) -> Result<SourceTag, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_folds(s: &str) -> Result<FoldScheme, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_class_weights(s: &str) -> Result<ClassWeights, String> {
    let (b, c) = s.split_once(',').ok_or("expected `benign,cancer`, e.g. 1,0.5")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok(ClassWeights {
        benign: parse(b)?,
        cancer: parse(c)?,
    })
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crop, normalize and resize every view to a 224×224 patch.
    Preprocess,
    /// Train the patch regressor on primary/recombined pairs.
    TrainShallow {
        #[arg(long)]
        pairs_per_image: Option<usize>,
        #[arg(long)]
        validation_cases: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum)]
        region: Option<RegionArg>,
    },
    /// Render virtual recombined images and emit an augmented manifest.
    Synthesize {
        /// Model manifest written by `train-shallow`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        window_step: Option<usize>,
        #[arg(long, value_enum)]
        region: Option<RegionArg>,
    },
    /// Deep features for every patch, one CSV row per case.
    Extract {
        /// Patch index written by `preprocess`.
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_parser = parse_source)]
        sources: Option<Vec<SourceTag>>,
    },
    /// Cross-validated boosted-tree classification.
    Evaluate {
        /// Feature CSV written by `extract`.
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_source)]
        sources: Option<Vec<SourceTag>>,
        /// `loocv` or `stratified:<k>`.
        #[arg(long, value_parser = parse_folds)]
        folds: Option<FoldScheme>,
        #[arg(long)]
        threshold: Option<f64>,
        /// `benign,cancer` sample weights.
        #[arg(long, value_parser = parse_class_weights)]
        class_weights: Option<ClassWeights>,
        #[arg(long)]
        trees: Option<usize>,
    },
    /// Write a seeded random residual-network weight file.
    GenRandomWeights,
    /// Generate a synthetic two-view dataset.
    MakeSyntheticDataset {
        #[arg(long, default_value_t = 40)]
        cases: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, value_enum, default_value = "recombined")]
        task: FixtureTask,
        /// Amplitude of the cancer mottling in the FFDM images.
        #[arg(long, default_value_t = FixtureSpec::default().texture_amplitude)]
        texture_amplitude: f64,
    },
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    v.as_deref()
        .ok_or_else(|| CliError::input(format!("--{flag} is required for this command")))
}

fn print_summary<T: Serialize>(value: &T) -> CliResult<()> {
    println!(
        "{}",
        serde_json::to_string(value).map_err(|e| CliError::Internal(e.into()))?
    );
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = PipelineConfig::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        cfg.seeds.master = seed;
    }
    let out_opt = cli.global.out.clone().or_else(|| cfg.paths.output_dir.clone());
    let out = required(&out_opt, "out")?;
    match cli.command {
        Command::Preprocess => {
            let s = preprocess(required(&cli.global.manifest, "manifest")?, out)?;
            print_summary(&s)
        }
        Command::TrainShallow {
            pairs_per_image,
            validation_cases,
            epochs,
            region,
        } => {
            let mut train = cfg.shallow.clone();
            if let Some(e) = epochs {
                train.epochs = e;
            }
            let opts = TrainOptions {
                pairs_per_image: pairs_per_image.unwrap_or(cfg.pairs_per_image),
                validation_cases: validation_cases.unwrap_or(cfg.validation_cases),
                region: region.map_or(cfg.region, Into::into),
                train,
                seed: cfg.seeds.shallow(),
            };
            print_summary(&train_shallow(required(&cli.global.manifest, "manifest")?, out, &opts)?)
        }
        Command::Synthesize {
            model,
            window_step,
            region,
        } => {
            let opts = SynthOptions {
                region: region.map_or(cfg.region, Into::into),
                window_step: window_step.unwrap_or(cfg.window_step),
            };
            print_summary(&synthesize(
                required(&cli.global.manifest, "manifest")?,
                &model,
                out,
                &opts,
            )?)
        }
        Command::Extract {
            index,
            weights,
            sources,
        } => {
            let weights = weights.or(cfg.paths.weights.clone());
            let s = extract(
                &index,
                required(&weights, "weights")?,
                out,
                sources.or(cfg.sources.clone()),
            )?;
            print_summary(&s)
        }
        Command::Evaluate {
            features,
            sources,
            folds,
            threshold,
            class_weights,
            trees,
        } => {
            let mut gbt = cfg.gbt.clone();
            if let Some(w) = class_weights {
                gbt.class_weights = w;
            }
            if let Some(t) = trees {
                gbt.n_trees = t;
            }
            let opts = EvalOptions {
                sources: sources.or(cfg.sources.clone()),
                folds: folds.unwrap_or(cfg.folds),
                threshold: threshold.unwrap_or(cfg.threshold),
                gbt,
                master_seed: cfg.seeds.gbt(),
            };
            let report = evaluate(&features, out, &opts)?;
            print_summary(&EvalSummary::from(&report))
        }
        Command::GenRandomWeights => {
            let path = gen_random_weights(out, cfg.seeds.master)?;
            print_summary(&serde_json::json!({ "weights": path }))
        }
        Command::MakeSyntheticDataset {
            cases,
            size,
            task,
            texture_amplitude,
        } => {
            let spec = FixtureSpec {
                cases,
                size,
                task,
                seed: cfg.seeds.master,
                texture_amplitude,
            };
            let _lock = OutputLock::acquire(out)?;
            let m = fixture::make_dataset(out, &spec)?;
            print_summary(&serde_json::json!({
                "manifest": out.join("manifest.json"),
                "cases": m.cases.len(),
            }))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ViewFailure {
    pub case_id: String,
    pub view: ViewName,
    pub source_tag: SourceTag,
    pub error: String,
}

fn failure_error(what: &str, failures: &[ViewFailure], total: usize) -> CliError {
    let listed: Vec<String> = failures
        .iter()
        .map(|f| format!("{} {} {}: {}", f.case_id, f.view, f.source_tag, f.error))
        .collect();
    CliError::input(format!(
        "{what} failed for {} of {total} views: {}",
        failures.len(),
        listed.join("; ")
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct PreprocessSummary {
    pub patches: usize,
    pub failures: Vec<ViewFailure>,
}

pub const INDEX_FILE: &str = "index.json";

pub fn preprocess(manifest_path: &Path, out: &Path) -> CliResult<PreprocessSummary> {
    let m = LoadedManifest::load(manifest_path)?;
    if m.manifest.cases.is_empty() {
        return Err(CliError::input("manifest has no cases"));
    }
    let _lock = OutputLock::acquire(out)?;
    std::fs::create_dir_all(out.join("patches")).context("creating patch directory")?;
    let jobs: Vec<(&ManifestCase, &ManifestView)> = m
        .manifest
        .cases
        .iter()
        .flat_map(|c| c.views.iter().map(move |v| (c, v)))
        .collect();
    let results = par::map_slice(&jobs, |&(c, v)| -> lesion_core::Result<PatchEntry> {
        let (image, annotation) = m.load_view(v)?;
        let patch = imagecore::preprocess_box(&image, &annotation.lesion_box(&image)?)?;
        let rel = PathBuf::from("patches").join(format!("{}_{}_{}.f32", file_stem(&c.case_id), v.view, v.source_tag));
        io::write_f32_grid(&out.join(&rel), &patch)?;
        Ok(PatchEntry {
            case_id: c.case_id.clone(),
            label: c.label,
            view: v.view,
            source_tag: v.source_tag,
            patch_path: rel,
        })
    });
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for ((c, v), r) in jobs.iter().zip(results) {
        match r {
            Ok(e) => entries.push(e),
            Err(e) => failures.push(ViewFailure {
                case_id: c.case_id.clone(),
                view: v.view,
                source_tag: v.source_tag,
                error: e.to_string(),
            }),
        }
    }
    let distinct = entries.iter().map(|e| &e.patch_path).collect::<BTreeSet<_>>().len();
    if distinct != entries.len() {
        return Err(CliError::input("case ids collide after file-name sanitizing"));
    }
    io::write_json_atomic(
        &out.join(INDEX_FILE),
        &PatchIndex {
            patch_side: PATCH_SIDE,
            entries,
        },
    )?;
    let summary = PreprocessSummary {
        patches: distinct,
        failures,
    };
    io::write_json_atomic(&out.join("preprocess_report.json"), &summary)?;
    if !summary.failures.is_empty() {
        return Err(failure_error("preprocessing", &summary.failures, jobs.len()));
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub pairs_per_image: usize,
    pub validation_cases: usize,
    pub region: RenderRegion,
    pub train: TrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub train_cases: usize,
    pub validation_cases: Vec<String>,
    pub train_images: usize,
    pub validation_images: usize,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub epochs_run: usize,
    pub batches: usize,
    pub final_train_loss: f64,
    pub final_validation_mse: Option<f64>,
}

/// One primary view and the recombined view it should map onto.
struct ImagePair<'a> {
    case: &'a ManifestCase,
    input: &'a ManifestView,
    target: &'a ManifestView,
}

fn primary_views(case: &ManifestCase) -> Vec<&ManifestView> {
    let mut out: Vec<&ManifestView> = Vec::new();
    for view in [ViewName::CC, ViewName::MLO] {
        if let Some(v) = [SourceTag::LE, SourceTag::FFDM]
            .iter()
            .find_map(|&s| case.view(view, s))
        {
            out.push(v);
        }
    }
    out
}

fn image_pairs(m: &LoadedManifest) -> CliResult<Vec<ImagePair<'_>>> {
    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    for case in &m.manifest.cases {
        let primaries = primary_views(case);
        if primaries.is_empty() {
            unpaired.push(format!("{} (no LE/FFDM view)", case.case_id));
        }
        for input in primaries {
            match case.view(input.view, SourceTag::Recombined) {
                Some(target) => pairs.push(ImagePair { case, input, target }),
                None => unpaired.push(format!("{} ({} has no RECOMBINED view)", case.case_id, input.view)),
            }
        }
    }
    if !unpaired.is_empty() {
        return Err(Error::Completeness(format!("unpaired cases: {}", unpaired.join(", "))).into());
    }
    Ok(pairs)
}

/// Normalized input region, target cropped to the same placement, and mask.
fn training_region(
    m: &LoadedManifest,
    pair: &ImagePair<'_>,
    region: RenderRegion,
) -> lesion_core::Result<(ImageGrid, ImageGrid, TumorMask)> {
    let (input, annotation) = m.load_view(pair.input)?;
    let target = io::read_image(&m.resolve(&pair.target.image_path))?;
    if !input.same_shape(&target) {
        return Err(Error::Shape(format!(
            "case {} {}: input and recombined images differ in size",
            pair.case.case_id, pair.input.view
        )));
    }
    let mask = annotation.mask(input.width(), input.height())?;
    let (input_region, mask_region, placement) = synthesizer::region_for_mask(&input, &mask, region)?;
    let target_region = imagecore::minmax_normalize(&imagecore::crop(&target, &placement)?);
    Ok((input_region, target_region, mask_region))
}

const SPLIT_STREAM: u64 = 100;
const INIT_STREAM: u64 = 7;
const SAMPLE_STREAM_BASE: u64 = 1000;

pub fn train_shallow(manifest_path: &Path, out: &Path, opts: &TrainOptions) -> CliResult<TrainSummary> {
    let m = LoadedManifest::load(manifest_path)?;
    if m.manifest.cases.is_empty() {
        return Err(CliError::input("manifest has no cases"));
    }
    let pairs = image_pairs(&m)?;
    let n_cases = m.manifest.cases.len();
    if opts.validation_cases >= n_cases {
        return Err(Error::Config(format!(
            "{} validation cases leaves nothing to train on among {n_cases}",
            opts.validation_cases
        ))
        .into());
    }
    let _lock = OutputLock::acquire(out)?;
    let mut order: Vec<usize> = (0..n_cases).collect();
    rand::seq::SliceRandom::shuffle(
        order.as_mut_slice(),
        &mut rng::seeded(rng::derive_seed(opts.seed, SPLIT_STREAM)),
    );
    let held_out: BTreeSet<&str> = order[..opts.validation_cases]
        .iter()
        .map(|&i| m.manifest.cases[i].case_id.as_str())
        .collect();

    let sampled = par::map_range(pairs.len(), |i| -> lesion_core::Result<Vec<PatchPair>> {
        let (input, target, mask) = training_region(&m, &pairs[i], opts.region)?;
        let seed = rng::derive_seed(opts.seed, SAMPLE_STREAM_BASE + i as u64);
        synthesizer::sample_training_pairs(&input, &target, &mask, opts.pairs_per_image, seed)
    });
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    let (mut train_images, mut valid_images) = (0, 0);
    for (pair, r) in pairs.iter().zip(sampled) {
        let samples = r.map_err(|e| {
            CliError::from(anyhow::Error::from(e).context(format!("case {} {}", pair.case.case_id, pair.input.view)))
        })?;
        if held_out.contains(pair.case.case_id.as_str()) {
            valid.extend(samples);
            valid_images += 1;
        } else {
            train.extend(samples);
            train_images += 1;
        }
    }
    let config = TrainConfig {
        rng_seed: opts.seed,
        ..opts.train.clone()
    };
    let model = ShallowCnnModel::init(rng::derive_seed(opts.seed, INIT_STREAM));
    let outcome = shallow_cnn::train(model, &train, &config, &valid)?;
    shallow_cnn::save_model(&out.join("model.json"), &outcome.model, opts.seed, &config)?;

    let mut csv = String::from("epoch,batches,train_loss,validation_mse\n");
    for h in &outcome.history {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            h.epoch,
            h.batches,
            h.train_loss,
            h.validation_mse.map_or_else(String::new, |v| v.to_string())
        ));
    }
    io::write_atomic(&out.join("history.csv"), csv.as_bytes())?;
    let last = outcome.history.last();
    let summary = TrainSummary {
        train_cases: n_cases - held_out.len(),
        validation_cases: held_out.iter().map(|s| s.to_string()).collect(),
        train_images,
        validation_images: valid_images,
        train_pairs: train.len(),
        validation_pairs: valid.len(),
        epochs_run: outcome.history.len(),
        batches: last.map_or(0, |h| h.batches),
        final_train_loss: last.map_or(f64::NAN, |h| h.train_loss),
        final_validation_mse: last.and_then(|h| h.validation_mse),
    };
    io::write_json_atomic(&out.join("train_report.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub region: RenderRegion,
    pub window_step: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub virtual_images: usize,
    pub failures: Vec<ViewFailure>,
    pub manifest: PathBuf,
}

pub fn synthesize(manifest_path: &Path, model_path: &Path, out: &Path, opts: &SynthOptions) -> CliResult<SynthSummary> {
    let m = LoadedManifest::load(manifest_path)?;
    if m.manifest.cases.is_empty() {
        return Err(CliError::input("manifest has no cases"));
    }
    let (model, _) =
        shallow_cnn::load_model(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let _lock = OutputLock::acquire(out)?;
    std::fs::create_dir_all(out.join("virtual")).context("creating virtual image directory")?;

    let jobs: Vec<(&ManifestCase, &ManifestView)> = m
        .manifest
        .cases
        .iter()
        .flat_map(|c| primary_views(c).into_iter().map(move |v| (c, v)))
        .collect();
    let results = par::map_slice(&jobs, |&(c, v)| -> lesion_core::Result<ManifestView> {
        let (image, annotation) = m.load_view(v)?;
        let mask = annotation.mask(image.width(), image.height())?;
        let (region_img, region_mask, placement) = synthesizer::region_for_mask(&image, &mask, opts.region)?;
        let rendered = synthesizer::render_with_step(&model, &region_img, opts.window_step)?;
        let stem = format!("{}_{}_{}", file_stem(&c.case_id), v.view, SourceTag::Virtual);
        let rel = PathBuf::from("virtual").join(format!("{stem}.f32"));
        io::write_f32_grid(&out.join(&rel), &rendered.virtual_image)?;
        io::write_f32_grid(
            &out.join("virtual").join(format!("{stem}.coverage.f32")),
            &rendered.coverage.to_image(),
        )?;
        let (contour, mask_path) = match &annotation {
            Annotation::Contour(ct) => (
                Some(ct.translated(-(placement.x_min as isize), -(placement.y_min as isize))),
                None,
            ),
            Annotation::Mask(_) => {
                let p = PathBuf::from("virtual").join(format!("{stem}.mask.f32"));
                io::write_f32_grid(&out.join(&p), &region_mask.to_image())?;
                (None, Some(p))
            }
        };
        Ok(ManifestView {
            view: v.view,
            source_tag: SourceTag::Virtual,
            image_path: rel,
            contour,
            mask_path,
        })
    });

    let mut augmented = m.rebased(out)?;
    let mut failures = Vec::new();
    let mut produced = 0;
    for ((c, v), r) in jobs.iter().zip(results) {
        match r {
            Ok(new_view) => {
                let case = augmented
                    .cases
                    .iter_mut()
                    .find(|x| x.case_id == c.case_id)
                    .expect("case present");
                case.views
                    .retain(|x| !(x.view == v.view && x.source_tag == SourceTag::Virtual));
                case.views.push(new_view);
                produced += 1;
            }
            Err(e) => failures.push(ViewFailure {
                case_id: c.case_id.clone(),
                view: v.view,
                source_tag: v.source_tag,
                error: e.to_string(),
            }),
        }
    }
    let manifest_out = out.join("manifest.json");
    io::write_json_atomic(&manifest_out, &augmented)?;
    let summary = SynthSummary {
        virtual_images: produced,
        failures,
        manifest: manifest_out,
    };
    if !summary.failures.is_empty() {
        return Err(failure_error("synthesis", &summary.failures, jobs.len()));
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractSummary {
    pub cases: usize,
    pub images: usize,
    pub columns: usize,
    pub sources: Vec<SourceTag>,
    pub features: PathBuf,
}

pub const FEATURES_FILE: &str = "features.csv";

pub fn extract(
    index_path: &Path,
    weights_path: &Path,
    out: &Path,
    sources: Option<Vec<SourceTag>>,
) -> CliResult<ExtractSummary> {
    let index: PatchIndex =
        io::read_json(index_path).with_context(|| format!("reading patch index {}", index_path.display()))?;
    let base = index_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut declared: Vec<SourceTag> = sources.unwrap_or_else(|| index.entries.iter().map(|e| e.source_tag).collect());
    declared.sort_unstable();
    declared.dedup();
    if declared.is_empty() {
        return Err(CliError::input("patch index is empty"));
    }

    // cases in order of first appearance
    let mut case_order: Vec<(String, Label)> = Vec::new();
    let mut by_case: BTreeMap<&str, Vec<&PatchEntry>> = BTreeMap::new();
    for e in &index.entries {
        let slot = by_case.entry(e.case_id.as_str()).or_default();
        if slot.is_empty() {
            case_order.push((e.case_id.clone(), e.label));
        } else if slot[0].label != e.label {
            return Err(Error::Config(format!("case {} has conflicting labels", e.case_id)).into());
        }
        if declared.contains(&e.source_tag) {
            slot.push(e);
        }
    }
    let expected: BTreeSet<(ViewName, SourceTag)> = {
        let views: BTreeSet<ViewName> = index.entries.iter().map(|e| e.view).collect();
        views
            .iter()
            .flat_map(|&v| declared.iter().map(move |&s| (v, s)))
            .collect()
    };
    let mut missing = Vec::new();
    for (id, _) in &case_order {
        let have: BTreeSet<(ViewName, SourceTag)> =
            by_case[id.as_str()].iter().map(|e| (e.view, e.source_tag)).collect();
        let absent: Vec<String> = expected.difference(&have).map(|(v, s)| format!("{v} {s}")).collect();
        if !absent.is_empty() {
            missing.push(format!("{id} (missing {})", absent.join(", ")));
        }
    }
    if !missing.is_empty() {
        return Err(
            Error::Completeness(format!("patches missing for declared sources: {}", missing.join("; "))).into(),
        );
    }

    let weights =
        ResNetWeights::load(weights_path).with_context(|| format!("loading weights {}", weights_path.display()))?;
    let net = ResNet50::new(&weights)?;
    let _lock = OutputLock::acquire(out)?;

    let flat: Vec<&PatchEntry> = case_order
        .iter()
        .flat_map(|(id, _)| by_case[id.as_str()].iter().copied())
        .collect();
    let images = par::map_slice(&flat, |e| io::read_image(&base.join(&e.patch_path)))
        .into_iter()
        .collect::<lesion_core::Result<Vec<ImageGrid>>>()?;
    let items: Vec<(&ImageGrid, ViewName, SourceTag)> = images
        .iter()
        .zip(&flat)
        .map(|(img, e)| (img, e.view, e.source_tag))
        .collect();
    let vectors = net.extract_batch(&items)?;

    let per_case = expected.len();
    let mut rows = Vec::with_capacity(case_order.len());
    let mut tags = None;
    for chunk in vectors.chunks(per_case) {
        let cf = case_feature_vector(chunk)?;
        if tags.is_none() {
            tags = Some(cf.tags.clone());
        }
        rows.push(cf.values);
    }
    let tags = tags.expect("at least one case");
    debug_assert_eq!(tags.len(), per_case * FEATURES_PER_VIEW);
    let table = FeatureTable::new(
        case_order.iter().map(|(id, _)| id.clone()).collect(),
        case_order.iter().map(|(_, l)| *l).collect(),
        tags,
        Matrix::from_rows(&rows)?,
    )?;
    let path = out.join(FEATURES_FILE);
    table.write_csv(&path)?;
    Ok(ExtractSummary {
        cases: case_order.len(),
        images: flat.len(),
        columns: table.tags.len(),
        sources: declared,
        features: path,
    })
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub sources: Option<Vec<SourceTag>>,
    pub folds: FoldScheme,
    pub threshold: f64,
    pub gbt: GbtConfig,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub sources: Vec<SourceTag>,
    pub folds: usize,
    pub features: usize,
    pub auc: f64,
    pub mean_auc: f64,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        EvalSummary {
            sources: r.config.sources.clone(),
            folds: r.n_folds,
            features: r.n_features,
            auc: r.pooled_roc.auc,
            mean_auc: r.mean_roc.auc_mean,
            accuracy: r.pooled_metrics.accuracy,
            sensitivity: r.pooled_metrics.sensitivity,
            specificity: r.pooled_metrics.specificity,
        }
    }
}

pub fn evaluate(features: &Path, out: &Path, opts: &EvalOptions) -> CliResult<EvalReport> {
    let table = FeatureTable::read_csv(features).with_context(|| format!("reading features {}", features.display()))?;
    let config = ExperimentConfig {
        sources: opts.sources.clone().unwrap_or_else(|| table.sources()),
        folds: opts.folds,
        gbt: opts.gbt.clone(),
        threshold: opts.threshold,
        master_seed: opts.master_seed,
    };
    let report = run_experiment(&table, &config)?;
    let _lock = OutputLock::acquire(out)?;
    report.write(out)?;
    Ok(report)
}

pub const WEIGHTS_FILE: &str = "resnet50.json";

pub fn gen_random_weights(out: &Path, seed: u64) -> CliResult<PathBuf> {
    let _lock = OutputLock::acquire(out)?;
    let path = out.join(WEIGHTS_FILE);
    ResNetWeights::random(seed).save(&path)?;
    Ok(path)
}
