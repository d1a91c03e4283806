//! Gradient-boosted regression trees for binary classification under
//! logistic loss, with impurity-reduction feature importance.
//!
//! Each stage fits a depth-limited regression tree to the negative gradient
//! `y - p` using weighted variance reduction as the split criterion, then
//! sets leaf values with a one-step Newton estimate
//! `Σ w·r / Σ w·p·(1 - p)`. A split's impurity reduction is the drop in
//! weighted squared error it achieves; summing those per feature and
//! normalizing gives the importance scores.

use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::imagecore::Label;
use crate::{io, par, rng, Error, Result};

/// Gini impurity `1 - Σ p_i²` of a class distribution.
pub fn gini_impurity(class_fractions: &[f64]) -> Result<f64> {
    if class_fractions.is_empty() || class_fractions.iter().any(|&p| p.is_nan() || p < 0.0) {
        return Err(Error::Domain("class fractions must be non-negative".into()));
    }
    let total: f64 = class_fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("class fractions sum to {total}, not 1")));
    }
    Ok(1.0 - class_fractions.iter().map(|p| p * p).sum::<f64>())
}

/// Dense row-major sample × feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("rows have different lengths".into()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(idx.iter().map(|&c| row[c]));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `floor(sqrt(N))`, at least 1.
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub benign: f64,
    pub cancer: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights {
            benign: 1.0,
            cancer: 1.0,
        }
    }
}

impl ClassWeights {
    pub fn weight(&self, label: Label) -> f64 {
        match label {
            Label::Benign => self.benign,
            Label::Cancer => self.cancer,
        }
    }
}

/// Holdout-based early stopping on validation log-loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub validation_fraction: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub learning_rate: f64,
    pub class_weights: ClassWeights,
    pub rng_seed: u64,
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_trees: 21,
            max_depth: 3,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 2,
            learning_rate: 0.1,
            class_weights: ClassWeights::default(),
            rng_seed: 0,
            early_stopping: None,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Config(
                "n_trees, max_depth and min_samples_leaf must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        let w = self.class_weights;
        if !(w.benign > 0.0 && w.cancer > 0.0 && w.benign.is_finite() && w.cancer.is_finite()) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        if let Some(es) = self.early_stopping {
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) || es.patience == 0 {
                return Err(Error::Config(
                    "early stopping needs 0 < fraction < 1 and patience >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        impurity_reduction: f64,
    },
    Leaf {
        value: f64,
    },
}

/// Arena-stored binary tree; node 0 is the root. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn splits(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split {
                feature,
                threshold,
                impurity_reduction,
                ..
            } => Some((*feature, *threshold, *impurity_reduction)),
            TreeNode::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    /// Log-odds of the weighted class prior.
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
    /// Per-feature impurity reduction normalized to sum 1 (all zeros when no
    /// tree ever split).
    pub feature_importance: Vec<f64>,
    pub has_splits: bool,
    pub config: GbtConfig,
}

/// Normalized importance scores and whether any split contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct Importance {
    pub scores: Vec<f64>,
    pub has_splits: bool,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const PROBA_FLOOR: f64 = 1e-15;

/// Gains closer than this fraction of the node's `Σ w·r²` are treated as
/// equal, so roundoff from summation order cannot flip a tie or create a
/// spurious split on a pure node.
const REL_GAIN_EPS: f64 = 1e-10;

impl GbtModel {
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>())
    }

    /// Probability of cancer, kept strictly inside (0, 1).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.predict_raw(x)?).clamp(PROBA_FLOOR, 1.0 - PROBA_FLOOR))
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<f64>> {
        (0..x.rows()).map(|r| self.predict_proba(x.row(r))).collect()
    }

    pub fn feature_importance(&self) -> Importance {
        Importance {
            scores: self.feature_importance.clone(),
            has_splits: self.has_splits,
        }
    }

    /// Returns a copy using only the first `n` trees, with importances
    /// recomputed from those trees.
    pub fn truncated(&self, n: usize) -> GbtModel {
        let trees: Vec<RegressionTree> = self.trees.iter().take(n).cloned().collect();
        let (feature_importance, has_splits) = importance_from_trees(&trees, self.n_features);
        GbtModel {
            trees,
            feature_importance,
            has_splits,
            ..self.clone()
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

fn importance_from_trees(trees: &[RegressionTree], n_features: usize) -> (Vec<f64>, bool) {
    let mut raw = vec![0.0; n_features];
    let mut any = false;
    for t in trees {
        for (f, _, gain) in t.splits() {
            raw[f] += gain;
            any = true;
        }
    }
    let total: f64 = raw.iter().sum();
    if any && total > 0.0 {
        raw.iter_mut().for_each(|v| *v /= total);
        (raw, true)
    } else {
        (vec![0.0; n_features], false)
    }
}

/// Mean weighted logistic loss.
pub fn log_loss(model: &GbtModel, x: &Matrix, labels: &[Label]) -> Result<f64> {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        let p = model.predict_proba(x.row(r))?;
        let w = model.config.class_weights.weight(l);
        total -= w * if l.is_cancer() { p.ln() } else { (1.0 - p).ln() };
        wsum += w;
    }
    Ok(total / wsum)
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

struct Grower<'a> {
    x: &'a Matrix,
    residual: &'a [f64],
    weight: &'a [f64],
    hessian: &'a [f64],
    config: &'a GbtConfig,
    n_candidates: usize,
    rng: &'a mut rng::Rng,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        let num: f64 = idx.iter().map(|&i| self.weight[i] * self.residual[i]).sum();
        let den: f64 = idx.iter().map(|&i| self.weight[i] * self.hessian[i]).sum();
        if den.abs() < 1e-150 {
            0.0
        } else {
            num / den
        }
    }

    fn best_split_on(&self, feature: usize, idx: &[usize], tol: f64) -> Option<(f64, f64, usize)> {
        let min_leaf = self.config.min_samples_leaf;
        let mut sorted: Vec<(f64, usize)> = idx.iter().map(|&i| (self.x.get(i, feature), i)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let total_s: f64 = sorted.iter().map(|&(_, i)| self.weight[i] * self.residual[i]).sum();
        let total_w: f64 = sorted.iter().map(|&(_, i)| self.weight[i]).sum();
        let parent = total_s * total_s / total_w;
        let mut best: Option<(f64, f64, usize)> = None;
        let (mut sl, mut wl) = (0.0, 0.0);
        for k in 0..sorted.len() - 1 {
            let i = sorted[k].1;
            sl += self.weight[i] * self.residual[i];
            wl += self.weight[i];
            let n_left = k + 1;
            if n_left < min_leaf || sorted.len() - n_left < min_leaf || sorted[k].0 == sorted[k + 1].0 {
                continue;
            }
            let (sr, wr) = (total_s - sl, total_w - wl);
            let gain = sl * sl / wl + sr * sr / wr - parent;
            if best.is_none_or(|b| gain > b.0 + tol) {
                best = Some((gain, 0.5 * (sorted[k].0 + sorted[k + 1].0), n_left));
            }
        }
        best
    }

    fn find_split(&mut self, idx: &[usize]) -> Option<Split> {
        let n_features = self.x.cols();
        let mut features = index::sample(self.rng, n_features, self.n_candidates).into_vec();
        features.sort_unstable();
        let scale: f64 = idx.iter().map(|&i| self.weight[i] * self.residual[i].powi(2)).sum();
        let tol = REL_GAIN_EPS * scale;
        let candidates = par::map_slice(&features, |&f| self.best_split_on(f, idx, tol).map(|b| (f, b)));
        let mut best: Option<(usize, (f64, f64, usize))> = None;
        // features ascending, thresholds ascending within a feature: first max wins
        for (f, b) in candidates.into_iter().flatten() {
            if best.is_none_or(|(_, cur)| b.0 > cur.0 + tol) {
                best = Some((f, b));
            }
        }
        let (feature, (gain, threshold, _)) = best?;
        if gain.is_nan() || gain <= tol {
            return None;
        }
        let (left, right) = idx.iter().partition(|&&i| self.x.get(i, feature) <= threshold);
        Some(Split {
            feature,
            threshold,
            gain,
            left,
            right,
        })
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0 });
        let splittable = depth < self.config.max_depth && idx.len() >= 2 * self.config.min_samples_leaf;
        match splittable.then(|| self.find_split(idx)).flatten() {
            Some(split) => {
                let left = self.grow(&split.left, depth + 1);
                let right = self.grow(&split.right, depth + 1);
                self.nodes[id] = TreeNode::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                    impurity_reduction: split.gain,
                };
            }
            None => {
                self.nodes[id] = TreeNode::Leaf {
                    value: self.leaf_value(idx),
                };
            }
        }
        id
    }
}

fn check_inputs(x: &Matrix, labels: &[Label]) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.rows(), labels.len())));
    }
    if x.rows() < 2 {
        return Err(Error::Config("need at least 2 cases".into()));
    }
    if x.cols() == 0 {
        return Err(Error::Shape("feature matrix has no columns".into()));
    }
    if !labels.contains(&Label::Benign) || !labels.contains(&Label::Cancer) {
        return Err(Error::DegenerateLabels);
    }
    if let Some(pos) = x.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite feature value at row {}, column {}",
            pos / x.cols(),
            pos % x.cols()
        )));
    }
    Ok(())
}

pub fn fit(x: &Matrix, labels: &[Label], config: &GbtConfig) -> Result<GbtModel> {
    config.validate()?;
    check_inputs(x, labels)?;
    let mut r = rng::seeded(config.rng_seed);

    let (train_idx, valid_idx): (Vec<usize>, Vec<usize>) = match config.early_stopping {
        Some(es) => {
            let n_valid = ((x.rows() as f64 * es.validation_fraction).round() as usize).clamp(1, x.rows() - 2);
            let mut order: Vec<usize> = (0..x.rows()).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
            let (v, t) = order.split_at(n_valid);
            let (mut t, mut v) = (t.to_vec(), v.to_vec());
            t.sort_unstable();
            v.sort_unstable();
            (t, v)
        }
        None => ((0..x.rows()).collect(), Vec::new()),
    };
    let train_labels: Vec<Label> = train_idx.iter().map(|&i| labels[i]).collect();
    if !train_labels.contains(&Label::Benign) || !train_labels.contains(&Label::Cancer) {
        return Err(Error::DegenerateLabels);
    }
    let x_train = x.select_rows(&train_idx);
    let n = x_train.rows();
    let y: Vec<f64> = train_labels.iter().map(|l| l.as_u8() as f64).collect();
    let weight: Vec<f64> = train_labels.iter().map(|&l| config.class_weights.weight(l)).collect();
    let w_pos: f64 = weight.iter().zip(&y).map(|(w, y)| w * y).sum();
    let w_all: f64 = weight.iter().sum();
    let base_score = (w_pos / (w_all - w_pos)).ln();

    let mut model = GbtModel {
        base_score,
        learning_rate: config.learning_rate,
        n_features: x.cols(),
        trees: Vec::with_capacity(config.n_trees),
        feature_importance: vec![0.0; x.cols()],
        has_splits: false,
        config: config.clone(),
    };
    let mut raw = vec![base_score; n];
    let n_candidates = config.max_features.resolve(x.cols());
    let all: Vec<usize> = (0..n).collect();
    let mut best_valid = f64::INFINITY;
    let mut best_len = 0;
    for _ in 0..config.n_trees {
        let p: Vec<f64> = raw.iter().map(|&z| sigmoid(z)).collect();
        let residual: Vec<f64> = y.iter().zip(&p).map(|(y, p)| y - p).collect();
        let hessian: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
        let mut grower = Grower {
            x: &x_train,
            residual: &residual,
            weight: &weight,
            hessian: &hessian,
            config,
            n_candidates,
            rng: &mut r,
            nodes: Vec::new(),
        };
        grower.grow(&all, 0);
        let tree = RegressionTree { nodes: grower.nodes };
        for (i, z) in raw.iter_mut().enumerate() {
            *z += config.learning_rate * tree.predict(x_train.row(i));
        }
        model.trees.push(tree);

        if let Some(es) = config.early_stopping {
            let vx = x.select_rows(&valid_idx);
            let vl: Vec<Label> = valid_idx.iter().map(|&i| labels[i]).collect();
            let loss = log_loss(&model, &vx, &vl)?;
            if loss < best_valid {
                best_valid = loss;
                best_len = model.trees.len();
            } else if model.trees.len() - best_len >= es.patience {
                break;
            }
        }
    }
    if config.early_stopping.is_some() {
        model.trees.truncate(best_len.max(1));
    }
    let (imp, any) = importance_from_trees(&model.trees, x.cols());
    model.feature_importance = imp;
    model.has_splits = any;
    Ok(model)
}
