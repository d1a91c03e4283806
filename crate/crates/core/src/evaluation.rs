//! Cross-validation, classification metrics, ROC analysis and per-source
//! attribution of boosted-tree importance.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::deep_features::FeatureTag;
use crate::gbt::{self, GbtConfig, Matrix};
use crate::imagecore::{Label, SourceTag};
use crate::{io, par, rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldScheme {
    LeaveOneOut,
    Stratified { k: usize },
}

impl fmt::Display for FoldScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FoldScheme::LeaveOneOut => f.write_str("loocv"),
            FoldScheme::Stratified { k } => write!(f, "stratified:{k}"),
        }
    }
}

impl FromStr for FoldScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "loocv" {
            return Ok(FoldScheme::LeaveOneOut);
        }
        match s.strip_prefix("stratified:").map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 2 => Ok(FoldScheme::Stratified { k }),
            _ => Err(Error::Config(format!(
                "fold scheme `{s}` is not `loocv` or `stratified:<k>` with k >= 2"
            ))),
        }
    }
}

impl Serialize for FoldScheme {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FoldScheme {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub scheme: FoldScheme,
    pub n_folds: usize,
    /// Fold index per case, aligned with the input case order.
    pub assignments: Vec<usize>,
    pub rng_seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// LOOCV puts each case alone in its own fold. Stratified k-fold shuffles
/// each class (benign first) with the seeded RNG and deals it round-robin,
/// the dealing position carrying over between classes so fold sizes stay
/// within one of each other.
pub fn make_folds(labels: &[Label], scheme: FoldScheme, seed: u64) -> Result<FoldPlan> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::Config("need at least 2 cases for cross-validation".into()));
    }
    match scheme {
        FoldScheme::LeaveOneOut => Ok(FoldPlan {
            scheme,
            n_folds: n,
            assignments: (0..n).collect(),
            rng_seed: seed,
        }),
        FoldScheme::Stratified { k } => {
            if k > n {
                return Err(Error::Config(format!("{k} folds requested for {n} cases")));
            }
            if k < 2 {
                return Err(Error::Config("stratified folds need k >= 2".into()));
            }
            if !labels.contains(&Label::Benign) || !labels.contains(&Label::Cancer) {
                return Err(Error::DegenerateLabels);
            }
            let mut r = rng::seeded(seed);
            let mut assignments = vec![0; n];
            let mut position = 0;
            for class in [Label::Benign, Label::Cancer] {
                let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
                members.shuffle(&mut r);
                for i in members {
                    assignments[i] = position % k;
                    position += 1;
                }
            }
            Ok(FoldPlan {
                scheme,
                n_folds: k,
                assignments,
                rng_seed: seed,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    /// `None` when the sample has no cancers.
    pub sensitivity: Option<f64>,
    /// `None` when the sample has no benigns.
    pub specificity: Option<f64>,
}

/// Cancer is predicted iff `score >= threshold`.
pub fn confusion_metrics(scores: &[f64], labels: &[Label], threshold: f64) -> Result<ConfusionMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Domain("no scores to evaluate".into()));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Domain(format!("threshold {threshold} outside [0, 1]")));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l.is_cancer()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    Ok(ConfusionMetrics {
        tp,
        fp,
        tn,
        fn_,
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        sensitivity: ratio(tp, fn_),
        specificity: ratio(tn, fp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score cutoff reaching this point; absent for the origin.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC from sweeping every distinct score as a cutoff, from above. Tied
/// scores move together, producing a diagonal segment, so the trapezoid
/// area equals `P(pos > neg) + ½·P(pos = neg)`.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let pos = labels.iter().filter(|l| l.is_cancer()).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut twice_area = 0usize;
    let mut i = 0;
    while i < order.len() {
        let cut = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == cut {
            if labels[order[i]].is_cancer() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // exact integer trapezoid: width (fp - fp0), heights tp0 and tp
        twice_area += (fp - fp0) * (tp0 + tp);
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: Some(cut),
        });
    }
    Ok(RocCurve {
        points,
        auc: twice_area as f64 / (2 * pos * neg) as f64,
    })
}

/// Number of points on the fixed false-positive-rate grid (step 0.01).
pub const ROC_GRID_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRoc {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc_mean: f64,
    /// Population standard deviation of the per-curve AUCs.
    pub auc_sd: f64,
    pub n_curves: usize,
}

pub fn roc_grid() -> Vec<f64> {
    (0..ROC_GRID_POINTS)
        .map(|i| i as f64 / (ROC_GRID_POINTS - 1) as f64)
        .collect()
}

/// TPR of a curve at `x`: the highest point reached at FPR `x`, or linear
/// interpolation across the segment spanning `x`.
fn tpr_at(points: &[RocPoint], x: f64) -> f64 {
    let last_le = points.iter().rposition(|p| p.fpr <= x).unwrap_or(0);
    let p = points[last_le];
    if p.fpr == x || last_le + 1 == points.len() {
        return p.tpr;
    }
    let q = points[last_le + 1];
    p.tpr + (q.tpr - p.tpr) * (x - p.fpr) / (q.fpr - p.fpr)
}

/// Vertical averaging of ROC curves on [`roc_grid`].
pub fn mean_roc(curves: &[RocCurve]) -> Result<MeanRoc> {
    if curves.is_empty() {
        return Err(Error::Config("no ROC curves to average".into()));
    }
    let fpr = roc_grid();
    let n = curves.len() as f64;
    let tpr = fpr
        .iter()
        .map(|&x| curves.iter().map(|c| tpr_at(&c.points, x)).sum::<f64>() / n)
        .collect();
    let auc_mean = curves.iter().map(|c| c.auc).sum::<f64>() / n;
    let var = curves.iter().map(|c| (c.auc - auc_mean).powi(2)).sum::<f64>() / n;
    Ok(MeanRoc {
        fpr,
        tpr,
        auc_mean,
        auc_sd: var.sqrt(),
        n_curves: curves.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceContribution {
    pub source: SourceTag,
    /// Features of this source with nonzero importance.
    pub n_features_used: usize,
    /// Share of total importance carried by this source.
    pub fraction: f64,
}

/// One row per source present in `tags`, in canonical source order.
pub fn source_contribution(importance: &[f64], tags: &[FeatureTag]) -> Result<Vec<SourceContribution>> {
    if importance.len() != tags.len() {
        return Err(Error::Tagging(format!(
            "{} importance values but {} feature tags",
            importance.len(),
            tags.len()
        )));
    }
    let total: f64 = importance.iter().sum();
    let mut rows = Vec::new();
    for source in SourceTag::ALL {
        let cols: Vec<usize> = (0..tags.len()).filter(|&i| tags[i].source == source).collect();
        if cols.is_empty() {
            continue;
        }
        let mass: f64 = cols.iter().map(|&i| importance[i]).sum();
        rows.push(SourceContribution {
            source,
            n_features_used: cols.iter().filter(|&&i| importance[i] > 0.0).count(),
            fraction: if total > 0.0 { mass / total } else { 0.0 },
        });
    }
    Ok(rows)
}

/// Case-level feature matrix with per-column provenance. Missing cells are
/// stored as NaN and surface as completeness errors on use.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub case_ids: Vec<String>,
    pub labels: Vec<Label>,
    pub tags: Vec<FeatureTag>,
    pub matrix: Matrix,
}

impl FeatureTable {
    pub fn new(case_ids: Vec<String>, labels: Vec<Label>, tags: Vec<FeatureTag>, matrix: Matrix) -> Result<Self> {
        if case_ids.len() != labels.len() || matrix.rows() != labels.len() || matrix.cols() != tags.len() {
            return Err(Error::Shape(format!(
                "{} ids, {} labels, {} tags for a {}x{} matrix",
                case_ids.len(),
                labels.len(),
                tags.len(),
                matrix.rows(),
                matrix.cols()
            )));
        }
        let mut sorted_tags = tags.clone();
        sorted_tags.sort_unstable();
        if sorted_tags.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Tagging("duplicate feature tag".into()));
        }
        Ok(FeatureTable {
            case_ids,
            labels,
            tags,
            matrix,
        })
    }

    pub fn sources(&self) -> Vec<SourceTag> {
        let mut s: Vec<SourceTag> = self.tags.iter().map(|t| t.source).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Keeps the columns whose source is listed.
    pub fn select_sources(&self, sources: &[SourceTag]) -> Result<FeatureTable> {
        let absent: Vec<String> = sources
            .iter()
            .filter(|s| !self.tags.iter().any(|t| t.source == **s))
            .map(|s| s.to_string())
            .collect();
        if !absent.is_empty() {
            return Err(Error::Completeness(format!(
                "no feature columns for source(s) {}",
                absent.join(", ")
            )));
        }
        let cols: Vec<usize> = (0..self.tags.len())
            .filter(|&i| sources.contains(&self.tags[i].source))
            .collect();
        Ok(FeatureTable {
            case_ids: self.case_ids.clone(),
            labels: self.labels.clone(),
            tags: cols.iter().map(|&i| self.tags[i]).collect(),
            matrix: self.matrix.select_cols(&cols),
        })
    }

    /// Cases with any missing cell, each with the sources that are missing.
    pub fn incomplete_cases(&self) -> Vec<(String, Vec<SourceTag>)> {
        let mut out = Vec::new();
        for r in 0..self.matrix.rows() {
            let mut missing: Vec<SourceTag> = (0..self.tags.len())
                .filter(|&c| self.matrix.get(r, c).is_nan())
                .map(|c| self.tags[c].source)
                .collect();
            missing.dedup();
            if !missing.is_empty() {
                out.push((self.case_ids[r].clone(), missing));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["case_id".to_string(), "label".to_string()];
        header.extend(self.tags.iter().map(|t| t.to_string()));
        w.write_record(&header)
            .map_err(|e| Error::format(path, e.to_string()))?;
        for r in 0..self.matrix.rows() {
            let mut rec = vec![self.case_ids[r].clone(), self.labels[r].to_string()];
            rec.extend(
                self.matrix
                    .row(r)
                    .iter()
                    .map(|v| if v.is_nan() { String::new() } else { v.to_string() }),
            );
            w.write_record(&rec).map_err(|e| Error::format(path, e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
        io::write_atomic(path, &bytes)
    }

    pub fn read_csv(path: &Path) -> Result<FeatureTable> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let header = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
        if header.len() < 3 || &header[0] != "case_id" || &header[1] != "label" {
            return Err(Error::format(
                path,
                "header must start with case_id,label and list feature tags",
            ));
        }
        let tags = header
            .iter()
            .skip(2)
            .map(str::parse)
            .collect::<Result<Vec<FeatureTag>>>()?;
        let (mut ids, mut labels, mut data) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            if rec.len() != header.len() {
                return Err(Error::format(
                    path,
                    format!("row {} has {} fields", line + 1, rec.len()),
                ));
            }
            ids.push(rec[0].to_string());
            labels.push(match rec[1].trim().to_ascii_lowercase().as_str() {
                "cancer" | "1" => Label::Cancer,
                "benign" | "0" => Label::Benign,
                other => {
                    return Err(Error::format(
                        path,
                        format!("row {}: unknown label `{other}`", line + 1),
                    ))
                }
            });
            for (c, field) in rec.iter().skip(2).enumerate() {
                let field = field.trim();
                if field.is_empty() {
                    data.push(f64::NAN);
                    continue;
                }
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::format(path, format!("row {}: bad number `{field}`", line + 1)))?;
                if !v.is_finite() {
                    return Err(Error::Domain(format!(
                        "non-finite value for case {} in column {}",
                        ids.last().unwrap(),
                        tags[c]
                    )));
                }
                data.push(v);
            }
        }
        let matrix = Matrix::new(ids.len(), tags.len(), data)?;
        FeatureTable::new(ids, labels, tags, matrix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sources: Vec<SourceTag>,
    pub folds: FoldScheme,
    pub gbt: GbtConfig,
    pub threshold: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_cases: Vec<String>,
    pub metrics: ConfusionMetrics,
    /// Defined only when the test fold holds both classes.
    pub auc: Option<f64>,
    pub n_trees: usize,
    pub has_splits: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub label: Label,
    pub fold: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub tag: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub n_cases: usize,
    pub n_features: usize,
    pub n_folds: usize,
    pub folds: Vec<FoldResult>,
    /// Metrics on all out-of-fold scores pooled together.
    pub pooled_metrics: ConfusionMetrics,
    pub pooled_roc: RocCurve,
    /// Mean ROC over the folds with a defined AUC, or the pooled curve when
    /// no fold has both classes (LOOCV).
    pub mean_roc: MeanRoc,
    pub scores: Vec<CaseScore>,
    /// Fold-averaged importance, renormalized to sum 1; only nonzero rows.
    pub importance: Vec<ImportanceRow>,
    pub importance_has_splits: bool,
    pub contribution: Vec<SourceContribution>,
}

struct FoldOutput {
    scores: Vec<(usize, f64)>,
    importance: Vec<f64>,
    has_splits: bool,
    n_trees: usize,
}

pub fn run_experiment(table: &FeatureTable, config: &ExperimentConfig) -> Result<EvalReport> {
    if config.sources.is_empty() {
        return Err(Error::Config("no sources selected".into()));
    }
    let mut sources = config.sources.clone();
    sources.sort_unstable();
    sources.dedup();
    let data = table.select_sources(&sources)?;
    let incomplete = data.incomplete_cases();
    if !incomplete.is_empty() {
        let listed: Vec<String> = incomplete
            .iter()
            .map(|(id, s)| {
                let s: Vec<String> = s.iter().map(|t| t.to_string()).collect();
                format!("{id} (missing {})", s.join("/"))
            })
            .collect();
        return Err(Error::Completeness(format!("incomplete cases: {}", listed.join(", "))));
    }
    if !data.labels.contains(&Label::Benign) || !data.labels.contains(&Label::Cancer) {
        return Err(Error::DegenerateLabels);
    }
    let plan = make_folds(
        &data.labels,
        config.folds,
        rng::derive_seed(config.master_seed, u64::MAX),
    )?;

    let outputs = par::try_map_range(plan.n_folds, |fold| -> Result<FoldOutput> {
        let train = plan.train_indices(fold);
        let test = plan.test_indices(fold);
        let train_labels: Vec<Label> = train.iter().map(|&i| data.labels[i]).collect();
        let fold_config = GbtConfig {
            rng_seed: rng::derive_seed(config.master_seed, fold as u64),
            ..config.gbt.clone()
        };
        let model = gbt::fit(&data.matrix.select_rows(&train), &train_labels, &fold_config)?;
        let scores = test
            .iter()
            .map(|&i| Ok((i, model.predict_proba(data.matrix.row(i))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(FoldOutput {
            scores,
            importance: model.feature_importance.clone(),
            has_splits: model.has_splits,
            n_trees: model.trees.len(),
        })
    })?;

    let n = data.labels.len();
    let mut pooled = vec![f64::NAN; n];
    let mut folds = Vec::with_capacity(plan.n_folds);
    let mut fold_curves = Vec::new();
    let mut importance = vec![0.0; data.tags.len()];
    for (fold, out) in outputs.iter().enumerate() {
        let (idx, s): (Vec<usize>, Vec<f64>) = out.scores.iter().copied().unzip();
        let l: Vec<Label> = idx.iter().map(|&i| data.labels[i]).collect();
        for (&i, &v) in idx.iter().zip(&s) {
            pooled[i] = v;
        }
        let curve = roc_auc(&s, &l).ok();
        folds.push(FoldResult {
            fold,
            test_cases: idx.iter().map(|&i| data.case_ids[i].clone()).collect(),
            metrics: confusion_metrics(&s, &l, config.threshold)?,
            auc: curve.as_ref().map(|c| c.auc),
            n_trees: out.n_trees,
            has_splits: out.has_splits,
        });
        fold_curves.extend(curve);
        for (acc, v) in importance.iter_mut().zip(&out.importance) {
            *acc += v / plan.n_folds as f64;
        }
    }
    let total: f64 = importance.iter().sum();
    let has_splits = outputs.iter().any(|o| o.has_splits) && total > 0.0;
    if has_splits {
        importance.iter_mut().for_each(|v| *v /= total);
    }
    let pooled_roc = roc_auc(&pooled, &data.labels)?;
    let mean = if fold_curves.is_empty() {
        mean_roc(std::slice::from_ref(&pooled_roc))?
    } else {
        mean_roc(&fold_curves)?
    };
    Ok(EvalReport {
        config: ExperimentConfig {
            sources,
            ..config.clone()
        },
        n_cases: n,
        n_features: data.tags.len(),
        n_folds: plan.n_folds,
        pooled_metrics: confusion_metrics(&pooled, &data.labels, config.threshold)?,
        pooled_roc,
        mean_roc: mean,
        scores: (0..n)
            .map(|i| CaseScore {
                case_id: data.case_ids[i].clone(),
                label: data.labels[i],
                fold: plan.assignments[i],
                score: pooled[i],
            })
            .collect(),
        importance: data
            .tags
            .iter()
            .zip(&importance)
            .filter(|(_, &v)| v > 0.0)
            .map(|(t, &v)| ImportanceRow {
                tag: t.to_string(),
                score: v,
            })
            .collect(),
        importance_has_splits: has_splits,
        contribution: source_contribution(&importance, &data.tags)?,
        folds,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl EvalReport {
    /// Writes `report.json`, `metrics.csv`, `roc_points.csv`,
    /// `importance.csv` and `contribution.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_json_atomic(&dir.join("report.json"), self)?;

        let mut rows = vec![vec![
            "scope".to_string(),
            "n".into(),
            "accuracy".into(),
            "sensitivity".into(),
            "specificity".into(),
            "auc".into(),
        ]];
        for f in &self.folds {
            rows.push(vec![
                format!("fold{}", f.fold),
                f.test_cases.len().to_string(),
                f.metrics.accuracy.to_string(),
                opt(f.metrics.sensitivity),
                opt(f.metrics.specificity),
                opt(f.auc),
            ]);
        }
        let p = &self.pooled_metrics;
        rows.push(vec![
            "pooled".into(),
            self.n_cases.to_string(),
            p.accuracy.to_string(),
            opt(p.sensitivity),
            opt(p.specificity),
            self.pooled_roc.auc.to_string(),
        ]);
        rows.push(vec![
            "mean_roc".into(),
            self.mean_roc.n_curves.to_string(),
            String::new(),
            String::new(),
            String::new(),
            self.mean_roc.auc_mean.to_string(),
        ]);
        rows.push(vec![
            "mean_roc_sd".into(),
            self.mean_roc.n_curves.to_string(),
            String::new(),
            String::new(),
            String::new(),
            self.mean_roc.auc_sd.to_string(),
        ]);
        write_csv(&dir.join("metrics.csv"), &rows)?;

        let mut roc = vec![vec!["fpr".to_string(), "tpr".into()]];
        roc.extend(
            self.mean_roc
                .fpr
                .iter()
                .zip(&self.mean_roc.tpr)
                .map(|(x, y)| vec![x.to_string(), y.to_string()]),
        );
        write_csv(&dir.join("roc_points.csv"), &roc)?;

        let mut imp = vec![vec!["feature_tag".to_string(), "score".into()]];
        imp.extend(self.importance.iter().map(|r| vec![r.tag.clone(), r.score.to_string()]));
        write_csv(&dir.join("importance.csv"), &imp)?;

        let mut con = vec![vec!["source".to_string(), "n_features_used".into(), "fraction".into()]];
        con.extend(self.contribution.iter().map(|c| {
            vec![
                c.source.to_string(),
                c.n_features_used.to_string(),
                c.fraction.to_string(),
            ]
        }));
        write_csv(&dir.join("contribution.csv"), &con)
    }
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    io::write_atomic(path, &bytes)
}
