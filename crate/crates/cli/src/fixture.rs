//! Synthetic two-view datasets for tests and demos.
//!
//! Each view is a smooth tissue background with one elliptical lesion.
//! Cancer lesions carry a faint per-pixel mottling in the FFDM image. The
//! paired RECOMBINED image is a local contrast map, `0.1·f + 15·box3(|f − box3(f)|)`,
//! which turns that mottling into a strong signal while leaving smooth
//! tissue dark. The label therefore lives mostly in the recombined channel,
//! and a patch regressor can learn to recover it from FFDM alone.
//!
//! The identity task writes the FFDM image as its own target.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use lesion_core::imagecore::{Contour, ImageGrid, Label, SourceTag, ViewName};
use lesion_core::{io, rng, Error};

use crate::manifest::{DatasetManifest, ManifestCase, ManifestView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FixtureTask {
    Recombined,
    Identity,
}

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub cases: usize,
    pub size: usize,
    pub task: FixtureTask,
    pub seed: u64,
    /// Amplitude of the cancer mottling in FFDM intensity units.
    pub texture_amplitude: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            cases: 40,
            size: 96,
            task: FixtureTask::Recombined,
            seed: 0,
            texture_amplitude: 0.01,
        }
    }
}

const MAXVAL: u16 = 65535;
const CONTOUR_VERTICES: usize = 24;

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

struct ViewImages {
    ffdm: ImageGrid,
    recombined: ImageGrid,
    contour: Contour,
}

fn box3(img: &ImageGrid) -> ImageGrid {
    let (w, h) = (img.width() as isize, img.height() as isize);
    ImageGrid::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = 0.0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let sx = (x as isize + dx).clamp(0, w - 1) as usize;
                let sy = (y as isize + dy).clamp(0, h - 1) as usize;
                acc += img.get(sx, sy);
            }
        }
        acc / 9.0
    })
}

/// The fixture's recombined image as a function of the FFDM image.
pub fn contrast_map(ffdm: &ImageGrid) -> ImageGrid {
    let smooth = box3(ffdm);
    let detail = box3(&ImageGrid::from_fn(ffdm.width(), ffdm.height(), |x, y| {
        (ffdm.get(x, y) - smooth.get(x, y)).abs()
    }));
    ImageGrid::from_fn(ffdm.width(), ffdm.height(), |x, y| {
        (0.1 * ffdm.get(x, y) + 15.0 * detail.get(x, y)).clamp(0.0, 1.0)
    })
}

fn render_view(spec: &FixtureSpec, label: Label, seed: u64) -> ViewImages {
    let mut r = rng::seeded(seed);
    let n = spec.size;
    let s = n as f64;
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                r.gen_range(0.0..s),
                r.gen_range(0.0..s),
                r.gen_range(s / 6.0..s / 3.0),
                r.gen_range(-0.08..0.08),
            )
        })
        .collect();
    let (cx, cy) = (
        s / 2.0 + r.gen_range(-s / 10.0..s / 10.0),
        s / 2.0 + r.gen_range(-s / 10.0..s / 10.0),
    );
    let (rx, ry) = (r.gen_range(0.13 * s..0.2 * s), r.gen_range(0.13 * s..0.2 * s));
    let theta: f64 = r.gen_range(0.0..std::f64::consts::PI);
    let distance = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        let u = dx * theta.cos() + dy * theta.sin();
        let v = -dx * theta.sin() + dy * theta.cos();
        ((u / rx).powi(2) + (v / ry).powi(2)).sqrt()
    };
    let texture: Vec<f64> = (0..n * n).map(|_| if r.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let amp = if label.is_cancer() { spec.texture_amplitude } else { 0.0 };
    let ffdm = ImageGrid::from_fn(n, n, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let background = 0.25
            + bumps
                .iter()
                .map(|&(bx, by, sigma, a)| a * (-((xf - bx).powi(2) + (yf - by).powi(2)) / (2.0 * sigma * sigma)).exp())
                .sum::<f64>();
        let d = distance(xf, yf);
        let body = 0.3 * (1.0 - smoothstep(0.8, 1.1, d));
        let mottle = amp * texture[y * n + x] * (1.0 - smoothstep(0.7, 1.0, d));
        (background + body + mottle).clamp(0.0, 1.0)
    });
    let recombined = match spec.task {
        FixtureTask::Recombined => contrast_map(&ffdm),
        FixtureTask::Identity => ffdm.clone(),
    };
    let mut points: Vec<[usize; 2]> = Vec::with_capacity(CONTOUR_VERTICES);
    for k in 0..CONTOUR_VERTICES {
        let phi = 2.0 * std::f64::consts::PI * k as f64 / CONTOUR_VERTICES as f64;
        let (u, v) = (rx * phi.cos(), ry * phi.sin());
        let x = (cx + u * theta.cos() - v * theta.sin()).round().clamp(0.0, s - 1.0) as usize;
        let y = (cy + u * theta.sin() + v * theta.cos()).round().clamp(0.0, s - 1.0) as usize;
        if points.last() != Some(&[x, y]) && points.first() != Some(&[x, y]) {
            points.push([x, y]);
        }
    }
    ViewImages {
        ffdm,
        recombined,
        contour: Contour::new(points),
    }
}

fn to_pgm_scale(img: &ImageGrid) -> ImageGrid {
    ImageGrid::from_fn(img.width(), img.height(), |x, y| img.get(x, y) * MAXVAL as f64)
}

/// Writes images under `dir/images` and the manifest to `dir/manifest.json`.
/// Labels alternate after a seeded shuffle, so classes are balanced.
pub fn make_dataset(dir: &Path, spec: &FixtureSpec) -> lesion_core::Result<DatasetManifest> {
    if spec.cases < 2 || spec.size < 32 {
        return Err(Error::Config(
            "fixture needs at least 2 cases of at least 32×32 pixels".into(),
        ));
    }
    let images = dir.join("images");
    std::fs::create_dir_all(&images)?;
    let mut labels: Vec<Label> = (0..spec.cases)
        .map(|i| if i % 2 == 0 { Label::Cancer } else { Label::Benign })
        .collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng::seeded(spec.seed));
    let mut cases = Vec::with_capacity(spec.cases);
    for (i, &label) in labels.iter().enumerate() {
        let case_id = format!("case{i:03}");
        let mut views = Vec::new();
        for (vi, view) in [ViewName::CC, ViewName::MLO].into_iter().enumerate() {
            let v = render_view(spec, label, rng::derive_seed(spec.seed, (i * 2 + vi) as u64));
            for (source, img) in [(SourceTag::FFDM, &v.ffdm), (SourceTag::Recombined, &v.recombined)] {
                let rel = format!("images/{case_id}_{view}_{source}.pgm");
                io::write_pgm16(&dir.join(&rel), &to_pgm_scale(img), MAXVAL)?;
                views.push(ManifestView {
                    view,
                    source_tag: source,
                    image_path: rel.into(),
                    contour: Some(v.contour.clone()),
                    mask_path: None,
                });
            }
        }
        cases.push(ManifestCase { case_id, label, views });
    }
    let manifest = DatasetManifest {
        dataset: format!(
            "synthetic-{}",
            match spec.task {
                FixtureTask::Recombined => "recombined",
                FixtureTask::Identity => "identity",
            }
        ),
        cases,
    };
    io::write_json_atomic(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
