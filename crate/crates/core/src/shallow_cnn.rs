//! Patch-regression CNN: 15×15 input patch to 3×3 output patch.
//!
//! Architecture (valid convolutions, stride 1):
//!
//! ```text
//! 15×15×1 --conv 7×7 ×10, ReLU--> 9×9×10 --conv 7×7 ×10, ReLU--> 3×3×10 --conv 1×1 ×1--> 3×3×1
//! ```
//!
//! That is 500 + 4910 + 11 = 5421 trainable parameters. Forward and backward
//! passes are batched through im2col and GEMM; a batch is split into fixed
//! chunks whose partial gradients are summed in chunk order, so the result
//! does not depend on whether chunks run in parallel.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::imagecore::ImageGrid;
use crate::linalg::{dgemm, View};
use crate::{io, par, rng, Error, Result};

pub const INPUT_SIDE: usize = 15;
pub const OUTPUT_SIDE: usize = 3;
pub const HIDDEN_CHANNELS: usize = 10;
pub const KERNEL_SIDE: usize = 7;
pub const PARAMETER_COUNT: usize = 5421;

const IN_PIXELS: usize = INPUT_SIDE * INPUT_SIDE;
const OUT_PIXELS: usize = OUTPUT_SIDE * OUTPUT_SIDE;
const H1_SIDE: usize = INPUT_SIDE - KERNEL_SIDE + 1;
const H1_PIXELS: usize = H1_SIDE * H1_SIDE;
const TAPS: usize = KERNEL_SIDE * KERNEL_SIDE;
const K1: usize = TAPS;
const K2: usize = HIDDEN_CHANNELS * TAPS;
const CHUNK: usize = 32;

/// Kernels are stored `[out][in][kh][kw]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerParams {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub kernels: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConvLayerParams {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        ConvLayerParams {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            kernels: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
            biases: vec![0.0; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn fan_out(&self) -> usize {
        self.out_channels * self.kernel_h * self.kernel_w
    }

    pub fn parameter_count(&self) -> usize {
        self.kernels.len() + self.biases.len()
    }

    #[inline]
    pub fn kernel(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.kernels[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    fn shape_matches(&self, other: &ConvLayerParams) -> bool {
        self.out_channels == other.out_channels
            && self.in_channels == other.in_channels
            && self.kernel_h == other.kernel_h
            && self.kernel_w == other.kernel_w
            && self.kernels.len() == other.kernels.len()
            && self.biases.len() == other.biases.len()
    }
}

/// Weights and biases of the three convolution layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowCnnModel {
    pub layer1: ConvLayerParams,
    pub layer2: ConvLayerParams,
    pub output_layer: ConvLayerParams,
}

/// A gradient has exactly the layout of the model it differentiates.
pub type Gradient = ShallowCnnModel;

impl ShallowCnnModel {
    pub fn zeros() -> Self {
        ShallowCnnModel {
            layer1: ConvLayerParams::zeros(HIDDEN_CHANNELS, 1, KERNEL_SIDE, KERNEL_SIDE),
            layer2: ConvLayerParams::zeros(HIDDEN_CHANNELS, HIDDEN_CHANNELS, KERNEL_SIDE, KERNEL_SIDE),
            output_layer: ConvLayerParams::zeros(1, HIDDEN_CHANNELS, 1, 1),
        }
    }

    /// Glorot-uniform kernels, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut model = Self::zeros();
        let mut r = rng::seeded(seed);
        for layer in model.layers_mut() {
            let a = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            for w in layer.kernels.iter_mut() {
                *w = r.gen_range(-a..a);
            }
        }
        model
    }

    pub fn layers(&self) -> [&ConvLayerParams; 3] {
        [&self.layer1, &self.layer2, &self.output_layer]
    }

    pub fn layers_mut(&mut self) -> [&mut ConvLayerParams; 3] {
        [&mut self.layer1, &mut self.layer2, &mut self.output_layer]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.parameter_count()).sum()
    }

    /// Parameters in canonical order: layer1 kernels, layer1 biases, layer2
    /// kernels, layer2 biases, output kernels, output biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in self.layers() {
            out.extend_from_slice(&l.kernels);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != PARAMETER_COUNT {
            return Err(Error::Shape(format!(
                "expected {PARAMETER_COUNT} parameters, got {}",
                values.len()
            )));
        }
        let mut model = Self::zeros();
        let mut rest = values;
        for l in model.layers_mut() {
            let (k, tail) = rest.split_at(l.kernels.len());
            l.kernels.copy_from_slice(k);
            let (b, tail) = tail.split_at(l.biases.len());
            l.biases.copy_from_slice(b);
            rest = tail;
        }
        Ok(model)
    }

    fn check_architecture(&self) -> Result<()> {
        let reference = Self::zeros();
        let ok = self
            .layers()
            .iter()
            .zip(reference.layers())
            .all(|(a, b)| a.shape_matches(b));
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(
                "model layers do not match the fixed 15x15 -> 3x3 architecture".into(),
            ))
        }
    }

    /// `self -= lr * grad`
    pub fn apply_update(&mut self, grad: &Gradient, learning_rate: f64) {
        for (p, g) in self.layers_mut().into_iter().zip(grad.layers()) {
            for (w, dw) in p.kernels.iter_mut().zip(&g.kernels) {
                *w -= learning_rate * dw;
            }
            for (b, db) in p.biases.iter_mut().zip(&g.biases) {
                *b -= learning_rate * db;
            }
        }
    }

    fn accumulate(&mut self, other: &Gradient) {
        for (p, g) in self.layers_mut().into_iter().zip(other.layers()) {
            for (a, b) in p.kernels.iter_mut().zip(&g.kernels) {
                *a += b;
            }
            for (a, b) in p.biases.iter_mut().zip(&g.biases) {
                *a += b;
            }
        }
    }

    pub fn forward(&self, input: &ImageGrid) -> Result<ImageGrid> {
        check_grid(input, INPUT_SIDE, "input")?;
        let pred = self.predict_patches(&[input.data()]);
        ImageGrid::new(OUTPUT_SIDE, OUTPUT_SIDE, pred[0].to_vec())
    }

    /// Predicts one 3×3 patch (row-major) per 225-value input patch.
    pub fn predict_patches(&self, inputs: &[&[f64]]) -> Vec<[f64; OUT_PIXELS]> {
        for x in inputs {
            assert_eq!(x.len(), IN_PIXELS, "input patch must be 15x15");
        }
        let chunks = par::map_range(inputs.len().div_ceil(CHUNK), |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(inputs.len());
            let acts = Activations::forward(self, &inputs[lo..hi]);
            acts.out
        });
        chunks
            .into_iter()
            .flat_map(|out| {
                out.chunks_exact(OUT_PIXELS)
                    .map(|c| c.try_into().expect("3x3"))
                    .collect::<Vec<[f64; OUT_PIXELS]>>()
            })
            .collect()
    }

    /// Exact gradient of `loss_mse(forward(input), target)` for one sample.
    pub fn backward(&self, input: &ImageGrid, target: &ImageGrid) -> Result<Gradient> {
        check_grid(input, INPUT_SIDE, "input")?;
        check_grid(target, OUTPUT_SIDE, "target")?;
        self.check_architecture()?;
        let acts = Activations::forward(self, &[input.data()]);
        Ok(acts.backward(self, &[target.data()], 1.0).0)
    }

    /// Mean loss and mean gradient over a batch of pairs.
    pub fn batch_gradient(&self, pairs: &[&PatchPair]) -> (Gradient, f64) {
        let scale = 1.0 / pairs.len() as f64;
        let partial = par::map_range(pairs.len().div_ceil(CHUNK), |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(pairs.len());
            let inputs: Vec<&[f64]> = pairs[lo..hi].iter().map(|p| p.input.data()).collect();
            let targets: Vec<&[f64]> = pairs[lo..hi].iter().map(|p| p.target.data()).collect();
            Activations::forward(self, &inputs).backward(self, &targets, scale)
        });
        let mut grad = Gradient::zeros();
        let mut loss = 0.0;
        for (g, l) in &partial {
            grad.accumulate(g);
            loss += l;
        }
        (grad, loss * scale)
    }

    /// Mean per-pair MSE.
    pub fn mean_loss(&self, pairs: &[PatchPair]) -> f64 {
        if pairs.is_empty() {
            return 0.0;
        }
        let inputs: Vec<&[f64]> = pairs.iter().map(|p| p.input.data()).collect();
        let preds = self.predict_patches(&inputs);
        let total: f64 = preds
            .iter()
            .zip(pairs)
            .map(|(p, pair)| mse_slices(p, pair.target.data()))
            .sum();
        total / pairs.len() as f64
    }
}

fn check_grid(g: &ImageGrid, side: usize, what: &str) -> Result<()> {
    if g.width() != side || g.height() != side {
        return Err(Error::Shape(format!(
            "{what} must be {side}x{side}, got {}x{}",
            g.width(),
            g.height()
        )));
    }
    Ok(())
}

fn mse_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `(1/9) Σ (pred - target)²`
pub fn loss_mse(pred: &ImageGrid, target: &ImageGrid) -> Result<f64> {
    if !pred.same_shape(target) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs target {}x{}",
            pred.width(),
            pred.height(),
            target.width(),
            target.height()
        )));
    }
    check_grid(pred, OUTPUT_SIDE, "prediction")?;
    Ok(mse_slices(pred.data(), target.data()))
}

/// Forward-pass buffers for a chunk of samples, kept for backprop.
struct Activations {
    n: usize,
    /// `[n·81 × 49]` layer-1 im2col
    col1: Vec<f64>,
    /// `[n·81 × 10]` post-ReLU, position-major
    h1: Vec<f64>,
    /// `[n·9 × 490]` layer-2 im2col
    col2: Vec<f64>,
    /// `[n·9 × 10]` post-ReLU
    h2: Vec<f64>,
    /// `[n·9]` linear output
    out: Vec<f64>,
}

impl Activations {
    fn forward(model: &ShallowCnnModel, inputs: &[&[f64]]) -> Self {
        let n = inputs.len();
        let rows1 = n * H1_PIXELS;
        let mut col1 = vec![0.0; rows1 * K1];
        for (s, x) in inputs.iter().enumerate() {
            for y in 0..H1_SIDE {
                for xx in 0..H1_SIDE {
                    let row = &mut col1[(s * H1_PIXELS + y * H1_SIDE + xx) * K1..][..K1];
                    for ky in 0..KERNEL_SIDE {
                        let src = &x[(y + ky) * INPUT_SIDE + xx..][..KERNEL_SIDE];
                        row[ky * KERNEL_SIDE..(ky + 1) * KERNEL_SIDE].copy_from_slice(src);
                    }
                }
            }
        }
        let mut h1 = vec![0.0; rows1 * HIDDEN_CHANNELS];
        dense_relu(&col1, rows1, K1, &model.layer1, &mut h1, true);

        let rows2 = n * OUT_PIXELS;
        let mut col2 = vec![0.0; rows2 * K2];
        for s in 0..n {
            for y in 0..OUTPUT_SIDE {
                for xx in 0..OUTPUT_SIDE {
                    let row = &mut col2[(s * OUT_PIXELS + y * OUTPUT_SIDE + xx) * K2..][..K2];
                    for ky in 0..KERNEL_SIDE {
                        for kx in 0..KERNEL_SIDE {
                            let src = &h1[(s * H1_PIXELS + (y + ky) * H1_SIDE + xx + kx) * HIDDEN_CHANNELS..]
                                [..HIDDEN_CHANNELS];
                            for (c, &v) in src.iter().enumerate() {
                                row[c * TAPS + ky * KERNEL_SIDE + kx] = v;
                            }
                        }
                    }
                }
            }
        }
        let mut h2 = vec![0.0; rows2 * HIDDEN_CHANNELS];
        dense_relu(&col2, rows2, K2, &model.layer2, &mut h2, true);

        let mut out = vec![0.0; rows2];
        dense_relu(&h2, rows2, HIDDEN_CHANNELS, &model.output_layer, &mut out, false);
        Activations {
            n,
            col1,
            h1,
            col2,
            h2,
            out,
        }
    }

    /// Returns the gradient of `scale · Σ_samples loss` and the unscaled loss sum.
    fn backward(&self, model: &ShallowCnnModel, targets: &[&[f64]], scale: f64) -> (Gradient, f64) {
        let n = self.n;
        let rows2 = n * OUT_PIXELS;
        let rows1 = n * H1_PIXELS;
        let mut grad = Gradient::zeros();

        let mut loss = 0.0;
        let mut g3 = vec![0.0; rows2];
        for (s, t) in targets.iter().enumerate() {
            for p in 0..OUT_PIXELS {
                let d = self.out[s * OUT_PIXELS + p] - t[p];
                loss += d * d / OUT_PIXELS as f64;
                g3[s * OUT_PIXELS + p] = 2.0 * d / OUT_PIXELS as f64 * scale;
            }
        }

        // output layer: 1×1 conv over 10 channels
        dgemm(
            1,
            rows2,
            HIDDEN_CHANNELS,
            View::row_major(&g3, rows2),
            View::row_major(&self.h2, HIDDEN_CHANNELS),
            0.0,
            &mut grad.output_layer.kernels,
        );
        grad.output_layer.biases[0] = g3.iter().sum();
        let w3 = &model.output_layer.kernels;
        let mut dz2 = vec![0.0; rows2 * HIDDEN_CHANNELS];
        for ((dz, h), &g) in dz2
            .chunks_exact_mut(HIDDEN_CHANNELS)
            .zip(self.h2.chunks_exact(HIDDEN_CHANNELS))
            .zip(&g3)
        {
            for ((d, &a), &w) in dz.iter_mut().zip(h).zip(w3) {
                if a > 0.0 {
                    *d = g * w;
                }
            }
        }

        // layer 2
        dgemm(
            HIDDEN_CHANNELS,
            rows2,
            K2,
            View::transposed(&dz2, HIDDEN_CHANNELS),
            View::row_major(&self.col2, K2),
            0.0,
            &mut grad.layer2.kernels,
        );
        column_sums(&dz2, HIDDEN_CHANNELS, &mut grad.layer2.biases);
        let mut dcol2 = vec![0.0; rows2 * K2];
        dgemm(
            rows2,
            HIDDEN_CHANNELS,
            K2,
            View::row_major(&dz2, HIDDEN_CHANNELS),
            View::row_major(&model.layer2.kernels, K2),
            0.0,
            &mut dcol2,
        );
        let mut dz1 = vec![0.0; rows1 * HIDDEN_CHANNELS];
        for s in 0..n {
            for y in 0..OUTPUT_SIDE {
                for xx in 0..OUTPUT_SIDE {
                    let row = &dcol2[(s * OUT_PIXELS + y * OUTPUT_SIDE + xx) * K2..][..K2];
                    for ky in 0..KERNEL_SIDE {
                        for kx in 0..KERNEL_SIDE {
                            let dst = &mut dz1[(s * H1_PIXELS + (y + ky) * H1_SIDE + xx + kx) * HIDDEN_CHANNELS..]
                                [..HIDDEN_CHANNELS];
                            for (c, d) in dst.iter_mut().enumerate() {
                                *d += row[c * TAPS + ky * KERNEL_SIDE + kx];
                            }
                        }
                    }
                }
            }
        }
        for (d, &h) in dz1.iter_mut().zip(&self.h1) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }

        // layer 1
        dgemm(
            HIDDEN_CHANNELS,
            rows1,
            K1,
            View::transposed(&dz1, HIDDEN_CHANNELS),
            View::row_major(&self.col1, K1),
            0.0,
            &mut grad.layer1.kernels,
        );
        column_sums(&dz1, HIDDEN_CHANNELS, &mut grad.layer1.biases);
        (grad, loss)
    }
}

/// `out[r, o] = act(bias[o] + Σ_k cols[r, k] · w[o, k])`
fn dense_relu(cols: &[f64], rows: usize, k: usize, layer: &ConvLayerParams, out: &mut [f64], relu: bool) {
    let oc = layer.out_channels;
    for r in 0..rows {
        out[r * oc..(r + 1) * oc].copy_from_slice(&layer.biases);
    }
    dgemm(
        rows,
        k,
        oc,
        View::row_major(cols, k),
        View::transposed(&layer.kernels, k),
        1.0,
        out,
    );
    if relu {
        for v in out.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

fn column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// 15×15 input patch with its co-centered 3×3 target.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub input: ImageGrid,
    pub target: ImageGrid,
}

impl PatchPair {
    pub fn new(input: ImageGrid, target: ImageGrid) -> Result<Self> {
        check_grid(&input, INPUT_SIDE, "input")?;
        check_grid(&target, OUTPUT_SIDE, "target")?;
        Ok(PatchPair { input, target })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    /// Stop after this many epochs without a new best validation MSE.
    /// `None` disables early stopping.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 128,
            epochs: 50,
            rng_seed: 0,
            patience: Some(10),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Cumulative mini-batch updates at the end of this epoch.
    pub batches: usize,
    pub train_loss: f64,
    pub validation_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ShallowCnnModel,
    pub history: Vec<EpochRecord>,
}

/// Mini-batch SGD: `θ ← θ − lr · mean_gradient`, reshuffling every epoch.
pub fn train(
    model: ShallowCnnModel,
    pairs: &[PatchPair],
    config: &TrainConfig,
    validation: &[PatchPair],
) -> Result<TrainOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    model.check_architecture()?;
    let mut model = model;
    let mut r = rng::seeded(config.rng_seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut batches = 0;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut r);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&PatchPair> = idx.iter().map(|&i| &pairs[i]).collect();
            let (grad, loss) = model.batch_gradient(&batch);
            loss_sum += loss * batch.len() as f64;
            model.apply_update(&grad, config.learning_rate);
            batches += 1;
        }
        let validation_mse = (!validation.is_empty()).then(|| model.mean_loss(validation));
        history.push(EpochRecord {
            epoch,
            batches,
            train_loss: loss_sum / pairs.len() as f64,
            validation_mse,
        });
        if let (Some(v), Some(patience)) = (validation_mse, config.patience) {
            if v < best {
                best = v;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome { model, history })
}

/// JSON side of the model container; weights live in a float64 LE blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub parameter_count: usize,
    pub layers: Vec<LayerShape>,
    pub weights_file: String,
    pub seed: u64,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

pub const MODEL_FORMAT: &str = "shallow-cnn";

pub fn save_model(path: &Path, model: &ShallowCnnModel, seed: u64, config: &TrainConfig) -> Result<()> {
    let weights_file = format!(
        "{}.weights.bin",
        path.file_stem().and_then(|s| s.to_str()).unwrap_or("model")
    );
    let names = ["layer1", "layer2", "output_layer"];
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        version: 1,
        parameter_count: model.parameter_count(),
        layers: model
            .layers()
            .iter()
            .zip(names)
            .map(|(l, name)| LayerShape {
                name: name.into(),
                out_channels: l.out_channels,
                in_channels: l.in_channels,
                kernel_h: l.kernel_h,
                kernel_w: l.kernel_w,
            })
            .collect(),
        weights_file: weights_file.clone(),
        seed,
        config: config.clone(),
    };
    let blob: Vec<u8> = model.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect();
    io::write_atomic(&path.with_file_name(&weights_file), &blob)?;
    io::write_json_atomic(path, &manifest)
}

pub fn load_model(path: &Path) -> Result<(ShallowCnnModel, ModelManifest)> {
    let manifest: ModelManifest = io::read_json(path)?;
    if manifest.format != MODEL_FORMAT {
        return Err(Error::format(path, format!("unexpected format `{}`", manifest.format)));
    }
    let reference = ShallowCnnModel::zeros();
    for (shape, l) in manifest.layers.iter().zip(reference.layers()) {
        let found = [shape.out_channels, shape.in_channels, shape.kernel_h, shape.kernel_w];
        let expected = [l.out_channels, l.in_channels, l.kernel_h, l.kernel_w];
        if found != expected {
            return Err(Error::TensorShape {
                name: shape.name.clone(),
                expected: expected.to_vec(),
                found: found.to_vec(),
            });
        }
    }
    let blob_path = path.with_file_name(&manifest.weights_file);
    let bytes = std::fs::read(&blob_path)?;
    if bytes.len() != PARAMETER_COUNT * 8 {
        return Err(Error::TruncatedBlob {
            expected: PARAMETER_COUNT * 8,
            found: bytes.len(),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((ShallowCnnModel::from_flat(&values)?, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Direct nested-loop valid convolution, independent of the im2col path.
    fn naive_conv(input: &[f64], in_c: usize, side: usize, layer: &ConvLayerParams, relu: bool) -> (Vec<f64>, usize) {
        let k = layer.kernel_h;
        let out_side = side - k + 1;
        let mut out = vec![0.0; layer.out_channels * out_side * out_side];
        for o in 0..layer.out_channels {
            for y in 0..out_side {
                for x in 0..out_side {
                    let mut acc = layer.biases[o];
                    for i in 0..in_c {
                        for ky in 0..k {
                            for kx in 0..k {
                                acc += layer.kernel(o, i, ky, kx) * input[(i * side + y + ky) * side + x + kx];
                            }
                        }
                    }
                    out[(o * out_side + y) * out_side + x] = if relu { acc.max(0.0) } else { acc };
                }
            }
        }
        (out, out_side)
    }

    fn naive_forward(model: &ShallowCnnModel, input: &[f64]) -> Vec<f64> {
        let (h1, s1) = naive_conv(input, 1, 15, &model.layer1, true);
        let (h2, s2) = naive_conv(&h1, 10, s1, &model.layer2, true);
        naive_conv(&h2, 10, s2, &model.output_layer, false).0
    }

    fn random_grid(side: usize, r: &mut rng::Rng) -> ImageGrid {
        ImageGrid::new(side, side, (0..side * side).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn with_random_biases(seed: u64) -> ShallowCnnModel {
        let mut m = ShallowCnnModel::init(seed);
        let mut r = rng::seeded(seed ^ 0xb1a5);
        for l in m.layers_mut() {
            for b in l.biases.iter_mut() {
                *b = r.gen_range(-0.1..0.1);
            }
        }
        m
    }

    #[test]
    fn parameter_budget() {
        let m = ShallowCnnModel::init(1);
        assert_eq!(m.parameter_count(), 7 * 7 * 10 + 10 + 7 * 7 * 10 * 10 + 10 + 10 + 1);
        assert_eq!(m.parameter_count(), PARAMETER_COUNT);
        assert_eq!(m.to_flat().len(), 5421);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = ShallowCnnModel::init(42);
        let b = ShallowCnnModel::init(42);
        assert_eq!(a.to_flat(), b.to_flat());
        assert_ne!(a.to_flat(), ShallowCnnModel::init(43).to_flat());
        assert!(a.layers().iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
        let bound = (6.0f64 / (49.0 + 490.0)).sqrt();
        assert!(a.layer1.kernels.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut r = rng::seeded(3);
        let out = ShallowCnnModel::zeros().forward(&random_grid(15, &mut r)).unwrap();
        assert_eq!((out.width(), out.height()), (3, 3));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_propagation_on_zero_input() {
        let mut m = ShallowCnnModel::init(5);
        m.layer1.biases = (0..10).map(|i| i as f64 * 0.1 - 0.3).collect();
        m.layer2.biases = (0..10).map(|i| 0.2 - i as f64 * 0.05).collect();
        m.output_layer.biases[0] = 0.7;
        // hand propagation: every layer-1 map is the constant relu(b1)
        let h1: Vec<f64> = m.layer1.biases.iter().map(|b| b.max(0.0)).collect();
        let h2: Vec<f64> = (0..10)
            .map(|o| {
                let mut acc = m.layer2.biases[o];
                for (i, h) in h1.iter().enumerate() {
                    let ksum: f64 = (0..7)
                        .flat_map(|ky| (0..7).map(move |kx| (ky, kx)))
                        .map(|(ky, kx)| m.layer2.kernel(o, i, ky, kx))
                        .sum();
                    acc += ksum * h;
                }
                acc.max(0.0)
            })
            .collect();
        let want: f64 =
            m.output_layer.biases[0] + h2.iter().zip(&m.output_layer.kernels).map(|(h, w)| h * w).sum::<f64>();
        let out = m.forward(&ImageGrid::filled(15, 15, 0.0)).unwrap();
        for &v in out.data() {
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut r = rng::seeded(9);
        for seed in 0..5 {
            let m = with_random_biases(seed);
            let x = random_grid(15, &mut r);
            let fast = m.forward(&x).unwrap();
            let slow = naive_forward(&m, x.data());
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn wrong_shapes_rejected() {
        let m = ShallowCnnModel::init(0);
        assert!(matches!(
            m.forward(&ImageGrid::filled(14, 15, 0.0)),
            Err(Error::Shape(_))
        ));
        let x = ImageGrid::filled(15, 15, 0.0);
        assert!(matches!(
            m.backward(&x, &ImageGrid::filled(3, 2, 0.0)),
            Err(Error::Shape(_))
        ));
        assert!(loss_mse(&ImageGrid::filled(3, 3, 0.0), &ImageGrid::filled(2, 2, 0.0)).is_err());
    }

    #[test]
    fn loss_examples() {
        let z = ImageGrid::filled(3, 3, 0.0);
        assert_eq!(loss_mse(&z, &z).unwrap(), 0.0);
        assert_eq!(loss_mse(&ImageGrid::filled(3, 3, 1.0), &z).unwrap(), 1.0);
        let mut one = z.clone();
        one.set(0, 0, 1.0);
        assert!((loss_mse(&one, &z).unwrap() - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn zero_model_zero_target_zero_gradient() {
        let mut r = rng::seeded(1);
        let g = ShallowCnnModel::zeros()
            .backward(&random_grid(15, &mut r), &ImageGrid::filled(3, 3, 0.0))
            .unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng::seeded(77);
        let m = with_random_biases(11);
        let x = random_grid(15, &mut r);
        let t = random_grid(3, &mut r);
        let g = m.backward(&x, &t).unwrap().to_flat();
        let base = m.to_flat();
        let loss_at = |p: &[f64]| {
            let mm = ShallowCnnModel::from_flat(p).unwrap();
            loss_mse(&mm.forward(&x).unwrap(), &t).unwrap()
        };
        let h = 1e-5;
        for _ in 0..60 {
            let i = r.gen_range(0..base.len());
            let mut p = base.clone();
            p[i] += h;
            let up = loss_at(&p);
            p[i] -= 2.0 * h;
            let down = loss_at(&p);
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(g[i].abs()).max(1e-8);
            assert!(
                (fd - g[i]).abs() / denom < 1e-4 || (fd - g[i]).abs() < 1e-10,
                "param {i}: fd {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn duplicated_sample_batch_gradient() {
        let mut r = rng::seeded(2);
        let m = with_random_biases(4);
        let pair = PatchPair::new(random_grid(15, &mut r), random_grid(3, &mut r)).unwrap();
        let single = m.backward(&pair.input, &pair.target).unwrap().to_flat();
        let (batch, _) = m.batch_gradient(&[&pair, &pair, &pair]);
        for (a, b) in single.iter().zip(batch.to_flat()) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn small_step_decreases_batch_loss() {
        let mut r = rng::seeded(8);
        let m = with_random_biases(6);
        let pairs: Vec<PatchPair> = (0..20)
            .map(|_| PatchPair::new(random_grid(15, &mut r), random_grid(3, &mut r)).unwrap())
            .collect();
        let refs: Vec<&PatchPair> = pairs.iter().collect();
        let (g, loss) = m.batch_gradient(&refs);
        assert!(g.to_flat().iter().any(|&v| v != 0.0));
        let mut stepped = m.clone();
        stepped.apply_update(&g, 1e-6);
        assert!(stepped.mean_loss(&pairs) < loss);
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let mut r = rng::seeded(10);
        let pairs: Vec<PatchPair> = (0..40)
            .map(|_| PatchPair::new(random_grid(15, &mut r), random_grid(3, &mut r)).unwrap())
            .collect();
        let m = ShallowCnnModel::init(3);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 16,
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(m.clone(), &pairs, &cfg, &[]).unwrap();
        assert_eq!(out.model, m);
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn empty_training_set_is_config_error() {
        let err = train(ShallowCnnModel::init(0), &[], &TrainConfig::default(), &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let mut r = rng::seeded(12);
        let pairs: Vec<PatchPair> = (0..100)
            .map(|_| {
                let x = random_grid(15, &mut r);
                let t = crate::imagecore::crop(
                    &x,
                    &crate::imagecore::BoundingBox {
                        x_min: 6,
                        y_min: 6,
                        x_max: 8,
                        y_max: 8,
                    },
                )
                .unwrap();
                PatchPair::new(x, t).unwrap()
            })
            .collect();
        let cfg = TrainConfig {
            batch_size: 32,
            epochs: 4,
            rng_seed: 5,
            ..TrainConfig::default()
        };
        let a = train(ShallowCnnModel::init(1), &pairs, &cfg, &pairs[..10]).unwrap();
        let b = train(ShallowCnnModel::init(1), &pairs, &cfg, &pairs[..10]).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert_eq!(a.history.last().unwrap().batches, 16);
    }

    #[test]
    fn inference_is_stateless() {
        let mut r = rng::seeded(13);
        let m = with_random_biases(2);
        let xs: Vec<ImageGrid> = (0..5).map(|_| random_grid(15, &mut r)).collect();
        let fwd: Vec<&[f64]> = xs.iter().map(|x| x.data()).collect();
        let rev: Vec<&[f64]> = xs.iter().rev().map(|x| x.data()).collect();
        let a = m.predict_patches(&fwd);
        let mut b = m.predict_patches(&rev);
        b.reverse();
        assert_eq!(a, b);
    }

    #[test]
    fn one_by_one_identity_passes_region_through() {
        // layer1/layer2 are center deltas, output is identity on channel 0
        let mut m = ShallowCnnModel::zeros();
        m.layer1.kernels[3 * 7 + 3] = 1.0;
        m.layer2.kernels[3 * 7 + 3] = 1.0;
        m.output_layer.kernels[0] = 1.0;
        let mut r = rng::seeded(14);
        let x = random_grid(15, &mut r);
        let out = m.forward(&x).unwrap();
        for y in 0..3 {
            for xx in 0..3 {
                assert!((out.get(xx, y) - x.get(xx + 6, y + 6)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn persistence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shallow.json");
        let m = with_random_biases(21);
        save_model(&path, &m, 21, &TrainConfig::default()).unwrap();
        let (back, manifest) = load_model(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest.parameter_count, 5421);
        let blob = dir.path().join(&manifest.weights_file);
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..100]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::TruncatedBlob { .. })));
    }
}
