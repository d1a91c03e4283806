//! Dataset manifests and the patch index written by `preprocess`.
//!
//! Relative paths inside a manifest resolve against the manifest's own
//! directory, so a dataset directory can be moved as a whole.

use std::collections::BTreeSet;
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use lesion_core::imagecore::{self, BoundingBox, Contour, ImageGrid, Label, SourceTag, ViewName};
use lesion_core::synthesizer::TumorMask;
use lesion_core::{io, Error};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset: String,
    pub cases: Vec<ManifestCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCase {
    pub case_id: String,
    pub label: Label,
    pub views: Vec<ManifestView>,
}

/// One image of a case. The lesion is given either as a contour polygon or
/// as a mask image whose nonzero pixels are inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestView {
    pub view: ViewName,
    pub source_tag: SourceTag,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contour: Option<Contour>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
}

impl ManifestCase {
    pub fn view(&self, view: ViewName, source: SourceTag) -> Option<&ManifestView> {
        self.views.iter().find(|v| v.view == view && v.source_tag == source)
    }
}

impl DatasetManifest {
    /// Structural checks that need no file access.
    pub fn validate(&self) -> anyhow::Result<()> {
        let mut ids = BTreeSet::new();
        for case in &self.cases {
            if case.case_id.is_empty() {
                bail!(Error::Config("empty case_id".into()));
            }
            if !ids.insert(case.case_id.as_str()) {
                bail!(Error::Config(format!("duplicate case_id `{}`", case.case_id)));
            }
            let mut seen = BTreeSet::new();
            for v in &case.views {
                if !seen.insert((v.view, v.source_tag)) {
                    bail!(Error::Config(format!(
                        "case {} lists {} {} twice",
                        case.case_id, v.view, v.source_tag
                    )));
                }
                if v.contour.is_some() == v.mask_path.is_some() {
                    bail!(Error::InvalidAnnotation(format!(
                        "case {} {} {}: give exactly one of contour or mask_path",
                        case.case_id, v.view, v.source_tag
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A manifest together with the directory its relative paths hang off.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: DatasetManifest,
    pub base_dir: PathBuf,
}

impl LoadedManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let manifest: DatasetManifest =
            io::read_json(path).with_context(|| format!("reading manifest {}", path.display()))?;
        manifest.validate()?;
        Ok(LoadedManifest {
            manifest,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_view(&self, v: &ManifestView) -> lesion_core::Result<(ImageGrid, Annotation)> {
        let image = io::read_image(&self.resolve(&v.image_path))?;
        let annotation = match (&v.contour, &v.mask_path) {
            (Some(c), None) => {
                c.validate(image.width(), image.height())?;
                Annotation::Contour(c.clone())
            }
            (None, Some(m)) => {
                let mask = TumorMask::from_image(&io::read_image(&self.resolve(m))?);
                if !mask.congruent(&image) {
                    return Err(Error::InvalidAnnotation("mask size differs from image".into()));
                }
                if mask.count() == 0 {
                    return Err(Error::EmptyMask);
                }
                Annotation::Mask(mask)
            }
            _ => {
                return Err(Error::InvalidAnnotation(
                    "need exactly one of contour or mask_path".into(),
                ))
            }
        };
        Ok((image, annotation))
    }

    /// A copy whose relative paths resolve from `new_dir` instead.
    pub fn rebased(&self, new_dir: &Path) -> anyhow::Result<DatasetManifest> {
        let mut m = self.manifest.clone();
        for case in &mut m.cases {
            for v in &mut case.views {
                v.image_path = relative_path(&self.resolve(&v.image_path), new_dir)?;
                if let Some(p) = &v.mask_path {
                    v.mask_path = Some(relative_path(&self.resolve(p), new_dir)?);
                }
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub enum Annotation {
    Contour(Contour),
    Mask(TumorMask),
}

impl Annotation {
    pub fn mask(&self, width: usize, height: usize) -> lesion_core::Result<TumorMask> {
        match self {
            Annotation::Contour(c) => TumorMask::from_contour(c, width, height),
            Annotation::Mask(m) => Ok(m.clone()),
        }
    }

    /// The enlarged lesion box used for the 224×224 patch.
    pub fn lesion_box(&self, image: &ImageGrid) -> lesion_core::Result<BoundingBox> {
        match self {
            Annotation::Contour(c) => imagecore::lesion_box(image, c),
            Annotation::Mask(m) => {
                let tight = m.bounding_box().ok_or(Error::EmptyMask)?;
                Ok(imagecore::enlarged_lesion_box(&tight, image.width(), image.height()))
            }
        }
    }
}

/// `target` expressed relative to `base_dir`; both must exist.
pub fn relative_path(target: &Path, base_dir: &Path) -> anyhow::Result<PathBuf> {
    let t = target
        .canonicalize()
        .with_context(|| format!("resolving {}", target.display()))?;
    let b = base_dir
        .canonicalize()
        .with_context(|| format!("resolving {}", base_dir.display()))?;
    let tc: Vec<Component> = t.components().collect();
    let bc: Vec<Component> = b.components().collect();
    let common = tc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &tc[common..] {
        out.push(c.as_os_str());
    }
    Ok(out)
}

/// File-name-safe rendering of a case id.
pub fn file_stem(case_id: &str) -> String {
    case_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEntry {
    pub case_id: String,
    pub label: Label,
    pub view: ViewName,
    pub source_tag: SourceTag,
    /// Relative to the index file's directory.
    pub patch_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchIndex {
    pub patch_side: usize,
    pub entries: Vec<PatchEntry>,
}
