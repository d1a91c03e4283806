//! Inference-only 50-layer bottleneck residual network used as a fixed
//! feature extractor.
//!
//! The network follows the canonical layout: a 7×7/2 stem convolution with
//! batch-norm and ReLU, a 3×3/2 max-pool, then four stages of bottleneck
//! blocks (multiplicities 3, 4, 6, 3; widths 64, 128, 256, 512; expansion 4).
//! The first block of every stage has a 1×1 projection shortcut, and stages
//! 2–4 downsample with stride 2 on the block's 3×3 convolution.
//!
//! The post-ReLU output of the last block of each stage is tapped
//! (56×56×256, 28×28×512, 14×14×1024, 7×7×2048 for a 224×224 input) and
//! every channel is reduced to its spatial mean, giving 3840 features.
//!
//! # Weight container
//!
//! A container is a JSON manifest plus a raw little-endian `f32` blob:
//!
//! ```json
//! {
//!   "format": "resnet50-bottleneck",
//!   "version": 1,
//!   "dtype": "f32le",
//!   "bn_epsilon": 1e-5,
//!   "input_normalization": null,
//!   "blob": "weights.bin",
//!   "tensors": [{"name": "conv1.weight", "shape": [64, 3, 7, 7], "offset": 0}, ...]
//! }
//! ```
//!
//! `offset` is a byte offset into the blob; a tensor occupies
//! `4 · Π shape` bytes stored row-major. Tensor names and shapes match the
//! usual PyTorch state-dict naming (`conv1.weight`, `bn1.running_var`,
//! `layer3.0.downsample.1.bias`, ...); see [`canonical_tensor_specs`] for the
//! full list. A converter for third-party weights only has to dump those
//! tensors in that layout; unrecognized tensors (such as a classifier head)
//! are ignored on load. `input_normalization`, when present, is
//! `{"mean": [m0, m1, m2], "std": [s0, s1, s2]}` applied per channel after
//! the grayscale input is replicated to three channels.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::imagecore::{ImageGrid, SourceTag, ViewName, PATCH_SIDE};
use crate::linalg::{sgemm, View};
use crate::{io, par, rng, Error, Result};

pub const STAGE_BLOCKS: [usize; 4] = [3, 4, 6, 3];
pub const STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const EXPANSION: usize = 4;
/// Channels tapped at the end of each stage.
pub const STAGE_FEATURES: [usize; 4] = [256, 512, 1024, 2048];
pub const FEATURES_PER_VIEW: usize = 3840;
pub const TAP_SIDES: [usize; 4] = [56, 28, 14, 7];
pub const WEIGHTS_FORMAT: &str = "resnet50-bottleneck";
pub const DEFAULT_BN_EPSILON: f32 = 1e-5;

/// Box–Muller standard normal draw.
fn normal(r: &mut rng::Rng) -> f32 {
    let u1: f64 = r.gen_range(f64::EPSILON..1.0);
    let u2: f64 = r.gen();
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape/data mismatch"
        );
        Tensor { shape, data }
    }

    pub fn filled(shape: Vec<usize>, v: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

/// Named tensor store for the whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetWeights {
    pub tensors: BTreeMap<String, Tensor>,
    pub bn_epsilon: f32,
    pub input_normalization: Option<ChannelNorm>,
}

/// Name and shape of a tensor the network requires.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

const BN_PARTS: [&str; 4] = ["weight", "bias", "running_mean", "running_var"];

fn push_bn(specs: &mut Vec<TensorSpec>, prefix: &str, channels: usize) {
    for part in BN_PARTS {
        specs.push(TensorSpec {
            name: format!("{prefix}.{part}"),
            shape: vec![channels],
        });
    }
}

fn push_conv(specs: &mut Vec<TensorSpec>, name: &str, out: usize, inp: usize, k: usize) {
    specs.push(TensorSpec {
        name: format!("{name}.weight"),
        shape: vec![out, inp, k, k],
    });
}

/// Every tensor the network needs, in canonical (serialization) order.
pub fn canonical_tensor_specs() -> Vec<TensorSpec> {
    let mut specs = Vec::new();
    push_conv(&mut specs, "conv1", 64, 3, 7);
    push_bn(&mut specs, "bn1", 64);
    let mut in_ch = 64;
    for (s, (&blocks, &width)) in STAGE_BLOCKS.iter().zip(&STAGE_WIDTHS).enumerate() {
        let out_ch = width * EXPANSION;
        for b in 0..blocks {
            let p = format!("layer{}.{b}", s + 1);
            let block_in = if b == 0 { in_ch } else { out_ch };
            push_conv(&mut specs, &format!("{p}.conv1"), width, block_in, 1);
            push_bn(&mut specs, &format!("{p}.bn1"), width);
            push_conv(&mut specs, &format!("{p}.conv2"), width, width, 3);
            push_bn(&mut specs, &format!("{p}.bn2"), width);
            push_conv(&mut specs, &format!("{p}.conv3"), out_ch, width, 1);
            push_bn(&mut specs, &format!("{p}.bn3"), out_ch);
            if b == 0 {
                push_conv(&mut specs, &format!("{p}.downsample.0"), out_ch, block_in, 1);
                push_bn(&mut specs, &format!("{p}.downsample.1"), out_ch);
            }
        }
        in_ch = out_ch;
    }
    specs
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestTensor {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightsManifest {
    format: String,
    version: u32,
    dtype: String,
    bn_epsilon: f32,
    input_normalization: Option<ChannelNorm>,
    blob: String,
    tensors: Vec<ManifestTensor>,
}

impl ResNetWeights {
    /// Seeded He-normal convolutions with mildly perturbed batch-norm moments.
    /// The last batch-norm of each residual branch is scaled down so the
    /// random network stays numerically tame at depth.
    pub fn random(seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let mut tensors = BTreeMap::new();
        for spec in canonical_tensor_specs() {
            let n: usize = spec.shape.iter().product();
            let data: Vec<f32> = if spec.name.ends_with("conv1.weight")
                || spec.name.ends_with("conv2.weight")
                || spec.name.ends_with("conv3.weight")
                || spec.name.ends_with("downsample.0.weight")
            {
                let fan_in: usize = spec.shape[1..].iter().product();
                let std = (2.0 / fan_in as f32).sqrt();
                (0..n).map(|_| normal(&mut r) * std).collect()
            } else if spec.name.ends_with(".weight") {
                let branch_end = spec.name.ends_with("bn3.weight");
                (0..n)
                    .map(|_| {
                        if branch_end {
                            r.gen_range(0.1..0.3)
                        } else {
                            r.gen_range(0.8..1.2)
                        }
                    })
                    .collect()
            } else if spec.name.ends_with(".bias") || spec.name.ends_with("running_mean") {
                (0..n).map(|_| r.gen_range(-0.1..0.1)).collect()
            } else {
                (0..n).map(|_| r.gen_range(0.8..1.2)).collect()
            };
            tensors.insert(spec.name, Tensor::new(spec.shape, data));
        }
        ResNetWeights {
            tensors,
            bn_epsilon: DEFAULT_BN_EPSILON,
            input_normalization: None,
        }
    }

    /// All convolutions zero, batch-norms identity with zero shift.
    pub fn zeros() -> Self {
        let mut tensors = BTreeMap::new();
        for spec in canonical_tensor_specs() {
            let is_bn_scale = spec.shape.len() == 1 && spec.name.ends_with(".weight");
            let fill = if is_bn_scale || spec.name.ends_with("running_var") {
                1.0
            } else {
                0.0
            };
            tensors.insert(spec.name.clone(), Tensor::filled(spec.shape, fill));
        }
        ResNetWeights {
            tensors,
            bn_epsilon: DEFAULT_BN_EPSILON,
            input_normalization: None,
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Checks that every canonical tensor is present with the right shape and
    /// that batch-norm variances are positive.
    pub fn validate(&self) -> Result<()> {
        for spec in canonical_tensor_specs() {
            let t = self.get(&spec.name)?;
            if t.shape != spec.shape {
                return Err(Error::TensorShape {
                    name: spec.name,
                    expected: spec.shape,
                    found: t.shape.clone(),
                });
            }
            if spec.name.ends_with("running_var") && t.data.iter().any(|&v| v.is_nan() || v <= 0.0) {
                return Err(Error::Domain(format!("{} has a non-positive variance", spec.name)));
            }
        }
        Ok(())
    }

    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        self.validate()?;
        let blob_name = format!(
            "{}.bin",
            manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or("weights")
        );
        let mut blob = Vec::new();
        let mut entries = Vec::new();
        for spec in canonical_tensor_specs() {
            let t = &self.tensors[&spec.name];
            entries.push(ManifestTensor {
                name: spec.name,
                shape: spec.shape,
                offset: blob.len(),
            });
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = WeightsManifest {
            format: WEIGHTS_FORMAT.into(),
            version: 1,
            dtype: "f32le".into(),
            bn_epsilon: self.bn_epsilon,
            input_normalization: self.input_normalization.clone(),
            blob: blob_name.clone(),
            tensors: entries,
        };
        io::write_atomic(&manifest_path.with_file_name(blob_name), &blob)?;
        io::write_json_atomic(manifest_path, &manifest)
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest: WeightsManifest = io::read_json(manifest_path)?;
        if manifest.format != WEIGHTS_FORMAT || manifest.dtype != "f32le" {
            return Err(Error::format(
                manifest_path,
                format!("unsupported container {} / {}", manifest.format, manifest.dtype),
            ));
        }
        let blob = std::fs::read(manifest_path.with_file_name(&manifest.blob))?;
        let by_name: BTreeMap<&str, &ManifestTensor> = manifest.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut tensors = BTreeMap::new();
        for spec in canonical_tensor_specs() {
            let entry = by_name
                .get(spec.name.as_str())
                .ok_or_else(|| Error::MissingTensor(spec.name.clone()))?;
            if entry.shape != spec.shape {
                return Err(Error::TensorShape {
                    name: spec.name,
                    expected: spec.shape,
                    found: entry.shape.clone(),
                });
            }
            let n: usize = spec.shape.iter().product();
            let end = entry.offset + 4 * n;
            let bytes = blob.get(entry.offset..end).ok_or(Error::TruncatedBlob {
                expected: end,
                found: blob.len(),
            })?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(spec.name.clone(), Tensor::new(spec.shape, data));
        }
        let weights = ResNetWeights {
            tensors,
            bn_epsilon: manifest.bn_epsilon,
            input_normalization: manifest.input_normalization,
        };
        weights.validate()?;
        Ok(weights)
    }
}

/// Channel-major activation tensor `[channels][height][width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    /// Spatial mean of every channel.
    pub fn global_average_pool(&self) -> Vec<f64> {
        let hw = (self.height * self.width) as f64;
        (0..self.channels)
            .map(|c| self.plane(c).iter().map(|&v| v as f64).sum::<f64>() / hw)
            .collect()
    }
}

/// Convolution with batch-norm folded into weights and bias.
#[derive(Debug, Clone)]
pub struct ConvBn {
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    /// `[out][in·k·k]`
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvBn {
    fn from_weights(w: &ResNetWeights, conv: &str, bn: &str, stride: usize) -> Result<Self> {
        let kw = w.get(&format!("{conv}.weight"))?;
        let gamma = &w.get(&format!("{bn}.weight"))?.data;
        let beta = &w.get(&format!("{bn}.bias"))?.data;
        let mean = &w.get(&format!("{bn}.running_mean"))?.data;
        let var = &w.get(&format!("{bn}.running_var"))?.data;
        let (out_channels, in_channels, kernel) = (kw.shape[0], kw.shape[1], kw.shape[2]);
        let per_out = in_channels * kernel * kernel;
        let mut weight = kw.data.clone();
        let mut bias = vec![0.0; out_channels];
        for o in 0..out_channels {
            let scale = gamma[o] / (var[o] + w.bn_epsilon).sqrt();
            for v in &mut weight[o * per_out..(o + 1) * per_out] {
                *v *= scale;
            }
            bias[o] = beta[o] - mean[o] * scale;
        }
        Ok(ConvBn {
            out_channels,
            in_channels,
            kernel,
            stride,
            pad: kernel / 2,
            weight,
            bias,
        })
    }

    pub fn forward(&self, x: &FeatureMap, relu: bool) -> FeatureMap {
        assert_eq!(x.channels, self.in_channels, "channel mismatch");
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let oh = (x.height + 2 * p - k) / s + 1;
        let ow = (x.width + 2 * p - k) / s + 1;
        let hw = oh * ow;
        let mut out = FeatureMap::zeros(self.out_channels, oh, ow);
        for (o, b) in self.bias.iter().enumerate() {
            out.data[o * hw..(o + 1) * hw].fill(*b);
        }
        let kk = self.in_channels * k * k;
        let w = View::row_major(&self.weight, kk);
        if k == 1 && s == 1 {
            sgemm(
                self.out_channels,
                kk,
                hw,
                w,
                View::row_major(&x.data, hw),
                1.0,
                &mut out.data,
            );
        } else if k == 1 {
            let sub = subsample(x, s);
            sgemm(
                self.out_channels,
                kk,
                hw,
                w,
                View::row_major(&sub.data, hw),
                1.0,
                &mut out.data,
            );
        } else {
            let col = im2col(x, k, s, p, oh, ow);
            sgemm(
                self.out_channels,
                kk,
                hw,
                w,
                View::row_major(&col, hw),
                1.0,
                &mut out.data,
            );
        }
        if relu {
            relu_inplace(&mut out.data);
        }
        out
    }
}

fn relu_inplace(v: &mut [f32]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// `[in·k·k][oh·ow]` patch matrix with zero padding.
fn im2col(x: &FeatureMap, k: usize, s: usize, p: usize, oh: usize, ow: usize) -> Vec<f32> {
    let hw = oh * ow;
    let mut col = vec![0.0f32; x.channels * k * k * hw];
    for c in 0..x.channels {
        let plane = x.plane(c);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * hw..][..hw];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= x.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * x.width..][..x.width];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && (ix as usize) < x.width {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn max_pool_3x3_s2(x: &FeatureMap) -> FeatureMap {
    let oh = (x.height + 2 - 3) / 2 + 1;
    let ow = (x.width + 2 - 3) / 2 + 1;
    let mut out = FeatureMap::zeros(x.channels, oh, ow);
    for c in 0..x.channels {
        let plane = x.plane(c);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..3 {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= x.height as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix >= 0 && (ix as usize) < x.width {
                            m = m.max(plane[iy as usize * x.width + ix as usize]);
                        }
                    }
                }
                out.data[(c * oh + oy) * ow + ox] = m;
            }
        }
    }
    out
}

/// 1×1 reduce, 3×3, 1×1 expand, each with batch-norm; residual add; ReLU.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    reduce: ConvBn,
    spatial: ConvBn,
    expand: ConvBn,
    projection: Option<ConvBn>,
}

impl Bottleneck {
    fn from_weights(w: &ResNetWeights, prefix: &str, stride: usize, project: bool) -> Result<Self> {
        Ok(Bottleneck {
            reduce: ConvBn::from_weights(w, &format!("{prefix}.conv1"), &format!("{prefix}.bn1"), 1)?,
            spatial: ConvBn::from_weights(w, &format!("{prefix}.conv2"), &format!("{prefix}.bn2"), stride)?,
            expand: ConvBn::from_weights(w, &format!("{prefix}.conv3"), &format!("{prefix}.bn3"), 1)?,
            projection: if project {
                Some(ConvBn::from_weights(
                    w,
                    &format!("{prefix}.downsample.0"),
                    &format!("{prefix}.downsample.1"),
                    stride,
                )?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, x: &FeatureMap) -> FeatureMap {
        let h = self.reduce.forward(x, true);
        let h = self.spatial.forward(&h, true);
        let mut out = self.expand.forward(&h, false);
        match &self.projection {
            Some(p) => add_assign(&mut out.data, &p.forward(x, false).data),
            None => add_assign(&mut out.data, &x.data),
        }
        relu_inplace(&mut out.data);
        out
    }
}

fn add_assign(a: &mut [f32], b: &[f32]) {
    assert_eq!(a.len(), b.len(), "residual shape mismatch");
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Strided 1×1 sampling, equivalent to a stride-`s` 1×1 convolution's input.
fn subsample(x: &FeatureMap, s: usize) -> FeatureMap {
    let oh = (x.height - 1) / s + 1;
    let ow = (x.width - 1) / s + 1;
    let mut out = FeatureMap::zeros(x.channels, oh, ow);
    for c in 0..x.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                out.data[(c * oh + oy) * ow + ox] = x.data[(c * x.height + oy * s) * x.width + ox * s];
            }
        }
    }
    out
}

/// The tapped post-ReLU outputs of the four stages.
#[derive(Debug, Clone)]
pub struct StageTaps {
    pub maps: [FeatureMap; 4],
}

/// A network ready for inference, built once from [`ResNetWeights`].
#[derive(Debug, Clone)]
pub struct ResNet50 {
    stem: ConvBn,
    stages: Vec<Vec<Bottleneck>>,
    input_normalization: Option<ChannelNorm>,
}

impl ResNet50 {
    pub fn new(weights: &ResNetWeights) -> Result<Self> {
        weights.validate()?;
        let stem = ConvBn::from_weights(weights, "conv1", "bn1", 2)?;
        let mut stages = Vec::new();
        for (s, &blocks) in STAGE_BLOCKS.iter().enumerate() {
            let stride = if s == 0 { 1 } else { 2 };
            let stage = (0..blocks)
                .map(|b| {
                    Bottleneck::from_weights(
                        weights,
                        &format!("layer{}.{b}", s + 1),
                        if b == 0 { stride } else { 1 },
                        b == 0,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(stage);
        }
        Ok(ResNet50 {
            stem,
            stages,
            input_normalization: weights.input_normalization.clone(),
        })
    }

    fn input_tensor(&self, image: &ImageGrid) -> FeatureMap {
        let (h, w) = (image.height(), image.width());
        let mut fm = FeatureMap::zeros(3, h, w);
        for c in 0..3 {
            let (m, s) = match &self.input_normalization {
                Some(n) => (n.mean[c], n.std[c]),
                None => (0.0, 1.0),
            };
            for (d, &v) in fm.data[c * h * w..(c + 1) * h * w].iter_mut().zip(image.data()) {
                *d = (v as f32 - m) / s;
            }
        }
        fm
    }

    /// Runs the network and returns the four stage outputs.
    pub fn stage_taps(&self, image: &ImageGrid) -> Result<StageTaps> {
        if image.width() != PATCH_SIDE || image.height() != PATCH_SIDE {
            return Err(Error::Shape(format!(
                "feature extraction needs a {PATCH_SIDE}x{PATCH_SIDE} image, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        let x = self.stem.forward(&self.input_tensor(image), true);
        let mut x = max_pool_3x3_s2(&x);
        let mut taps = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                x = block.forward(&x);
            }
            taps.push(x.clone());
        }
        let maps: [FeatureMap; 4] = taps.try_into().expect("four stages");
        for (i, m) in maps.iter().enumerate() {
            let want = (STAGE_FEATURES[i], TAP_SIDES[i], TAP_SIDES[i]);
            if (m.channels, m.height, m.width) != want {
                return Err(Error::Shape(format!(
                    "stage {} tap is {}x{}x{}, expected {}x{}x{}",
                    i + 1,
                    m.height,
                    m.width,
                    m.channels,
                    want.1,
                    want.2,
                    want.0
                )));
            }
        }
        Ok(StageTaps { maps })
    }

    pub fn extract_features(&self, image: &ImageGrid, view: ViewName, source: SourceTag) -> Result<FeatureVector> {
        let taps = self.stage_taps(image)?;
        let values: Vec<f64> = taps.maps.iter().flat_map(|m| m.global_average_pool()).collect();
        debug_assert_eq!(values.len(), FEATURES_PER_VIEW);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite deep feature".into()));
        }
        Ok(FeatureVector { values, source, view })
    }

    /// Extracts many images; results are in input order.
    pub fn extract_batch(&self, items: &[(&ImageGrid, ViewName, SourceTag)]) -> Result<Vec<FeatureVector>> {
        par::map_slice(items, |(img, v, s)| self.extract_features(img, *v, *s))
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source: SourceTag,
    pub view: ViewName,
}

/// Provenance of one column in a case-level feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureTag {
    pub source: SourceTag,
    pub view: ViewName,
    /// 1-based stage index.
    pub stage: u8,
    pub channel: u16,
}

impl std::fmt::Display for FeatureTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "src={};view={};stage={};ch={}",
            self.source, self.view, self.stage, self.channel
        )
    }
}

impl std::str::FromStr for FeatureTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Tagging(format!("malformed feature tag `{s}`"));
        let mut fields = BTreeMap::new();
        for part in s.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            fields.insert(k, v);
        }
        if fields.len() != 4 {
            return Err(bad());
        }
        let tag = FeatureTag {
            source: fields.get("src").ok_or_else(bad)?.parse()?,
            view: fields.get("view").ok_or_else(bad)?.parse()?,
            stage: fields.get("stage").ok_or_else(bad)?.parse().map_err(|_| bad())?,
            channel: fields.get("ch").ok_or_else(bad)?.parse().map_err(|_| bad())?,
        };
        if !(1..=4).contains(&tag.stage) || tag.channel as usize >= STAGE_FEATURES[tag.stage as usize - 1] {
            return Err(bad());
        }
        Ok(tag)
    }
}

/// Tags for the 3840 entries of one view vector, in stage/channel order.
pub fn view_tags(view: ViewName, source: SourceTag) -> Vec<FeatureTag> {
    STAGE_FEATURES
        .iter()
        .enumerate()
        .flat_map(|(s, &n)| {
            (0..n).map(move |c| FeatureTag {
                source,
                view,
                stage: s as u8 + 1,
                channel: c as u16,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseFeatures {
    pub values: Vec<f64>,
    pub tags: Vec<FeatureTag>,
}

/// Concatenates view vectors ordered by view (CC first) and then source
/// (acquired before contrast or virtual).
pub fn case_feature_vector(per_view: &[FeatureVector]) -> Result<CaseFeatures> {
    if per_view.is_empty() {
        return Err(Error::Config("no view vectors to concatenate".into()));
    }
    let mut order: Vec<&FeatureVector> = per_view.iter().collect();
    order.sort_by_key(|v| (v.view, v.source));
    for pair in order.windows(2) {
        if (pair[0].view, pair[0].source) == (pair[1].view, pair[1].source) {
            return Err(Error::Config(format!(
                "duplicate view vector for {} {}",
                pair[0].view, pair[0].source
            )));
        }
    }
    let mut values = Vec::with_capacity(order.len() * FEATURES_PER_VIEW);
    let mut tags = Vec::with_capacity(order.len() * FEATURES_PER_VIEW);
    for v in order {
        if v.values.len() != FEATURES_PER_VIEW {
            return Err(Error::Shape(format!(
                "view vector has {} values, expected {FEATURES_PER_VIEW}",
                v.values.len()
            )));
        }
        values.extend_from_slice(&v.values);
        tags.extend(view_tags(v.view, v.source));
    }
    Ok(CaseFeatures { values, tags })
}
