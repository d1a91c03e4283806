//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report prints even when output
//! is captured. The process exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use lesion_cli::fixture::FixtureSpec;
use lesion_core::deep_features::{
    case_feature_vector, ResNet50, ResNetWeights, FEATURES_PER_VIEW, STAGE_FEATURES, TAP_SIDES,
};
use lesion_core::evaluation::{make_folds, roc_auc, FoldScheme};
use lesion_core::gbt::{self, gini_impurity, GbtConfig, Matrix, MaxFeatures};
use lesion_core::imagecore::{minmax_normalize, ImageGrid, Label, SourceTag, ViewName, PATCH_SIDE};
use lesion_core::rng;
use lesion_core::shallow_cnn::{self, loss_mse, ShallowCnnModel, TrainConfig, INPUT_SIDE, OUTPUT_SIDE};
use lesion_core::synthesizer::{render_virtual_image, sample_training_pairs, TumorMask};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_grid(w: usize, h: usize, r: &mut rng::Rng) -> ImageGrid {
    ImageGrid::new(w, h, (0..w * h).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
}

fn gradient_check() -> Outcome {
    const H: f64 = 1e-5;
    const MODELS: u64 = 10;
    const COORDS: usize = 100;
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..MODELS {
        let mut r = rng::seeded(1000 + seed);
        let mut model = ShallowCnnModel::init(seed);
        for l in model.layers_mut() {
            for b in l.biases.iter_mut() {
                *b = r.gen_range(-0.1..0.1);
            }
        }
        let x = random_grid(INPUT_SIDE, INPUT_SIDE, &mut r);
        let target = random_grid(OUTPUT_SIDE, OUTPUT_SIDE, &mut r);
        let grad = model.backward(&x, &target).map_err(|e| e.to_string())?.to_flat();
        let base = model.to_flat();
        let loss_at = |p: &[f64]| {
            let m = ShallowCnnModel::from_flat(p).unwrap();
            loss_mse(&m.forward(&x).unwrap(), &target).unwrap()
        };
        for i in rand::seq::index::sample(&mut r, base.len(), COORDS) {
            let mut p = base.clone();
            p[i] += H;
            let up = loss_at(&p);
            p[i] -= 2.0 * H;
            let down = loss_at(&p);
            let fd = (up - down) / (2.0 * H);
            // the floor keeps vanishing gradients from dividing by ~0
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    let elapsed = t.elapsed();
    check(
        worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!("max rel err {worst:.2e} over {COORDS}x{MODELS} coords, {elapsed:.1?}"),
    )
}

fn parameter_budget() -> Outcome {
    let n = ShallowCnnModel::init(0).parameter_count();
    check(n == 5421, format!("{n} parameters"))
}

fn blobs(side: usize, seed: u64) -> ImageGrid {
    let mut r = rng::seeded(seed);
    let spots: Vec<(f64, f64, f64, f64)> = (0..25)
        .map(|_| {
            (
                r.gen_range(0.0..side as f64),
                r.gen_range(0.0..side as f64),
                r.gen_range(2.0..8.0),
                r.gen_range(-1.0..1.0),
            )
        })
        .collect();
    minmax_normalize(&ImageGrid::from_fn(side, side, |x, y| {
        spots
            .iter()
            .map(|&(cx, cy, s, a)| a * (-((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (2.0 * s * s)).exp())
            .sum()
    }))
}

fn identity_learning() -> Outcome {
    const MAX_BATCHES: usize = 2000;
    let t = Instant::now();
    let side = 64;
    let pairs_of = |seeds: std::ops::Range<u64>, n: usize| {
        seeds
            .flat_map(|s| {
                let img = blobs(side, s);
                sample_training_pairs(&img, &img, &TumorMask::full(side, side), n, s).unwrap()
            })
            .collect::<Vec<_>>()
    };
    let train = pairs_of(0..8, 320);
    let validation = pairs_of(100..102, 256);
    let config = TrainConfig {
        epochs: MAX_BATCHES / train.len().div_ceil(128),
        patience: None,
        rng_seed: 1,
        ..TrainConfig::default()
    };
    let out = shallow_cnn::train(ShallowCnnModel::init(7), &train, &config, &validation).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let reached = out
        .history
        .iter()
        .find(|e| e.validation_mse.is_some_and(|v| v < 1e-3) && e.batches <= MAX_BATCHES);
    let best = out
        .history
        .iter()
        .filter_map(|e| e.validation_mse)
        .fold(f64::INFINITY, f64::min);
    check(
        reached.is_some() && elapsed < Duration::from_secs(60),
        format!(
            "val MSE < 1e-3 after {} batches (best {best:.2e}), {elapsed:.1?}",
            reached.map_or("never".to_string(), |e| e.batches.to_string())
        ),
    )
}

fn synthesis_assembly() -> Outcome {
    let (w, h) = (40, 33);
    let mut r = rng::seeded(4);
    let image = random_grid(w, h, &mut r);
    let model = ShallowCnnModel::init(3);
    let out = render_virtual_image(&model, &image).map_err(|e| e.to_string())?;

    // independent accumulation of every window's 3x3 prediction
    let mut sum = vec![0.0; w * h];
    let mut count = vec![0u32; w * h];
    for y0 in 0..=h - INPUT_SIDE {
        for x0 in 0..=w - INPUT_SIDE {
            let patch = ImageGrid::from_fn(INPUT_SIDE, INPUT_SIDE, |x, y| image.get(x0 + x, y0 + y));
            let p = model.forward(&patch).unwrap();
            for dy in 0..OUTPUT_SIDE {
                for dx in 0..OUTPUT_SIDE {
                    let i = (y0 + 6 + dy) * w + x0 + 6 + dx;
                    sum[i] += p.get(dx, dy);
                    count[i] += 1;
                }
            }
        }
    }
    let interior_ok = (8..=h - 9).all(|y| (8..=w - 9).all(|x| out.coverage.get(x, y) == 9));
    let counts_ok = out.coverage.counts == count;
    let mut avg_err: f64 = 0.0;
    for i in 0..w * h {
        if count[i] > 0 {
            avg_err = avg_err.max((out.virtual_image.data()[i] - sum[i] / count[i] as f64).abs());
        }
    }

    let mut constant = ShallowCnnModel::zeros();
    constant.output_layer.biases[0] = 0.37;
    let flat = render_virtual_image(&constant, &image).map_err(|e| e.to_string())?;
    let constant_ok = (0..w * h)
        .filter(|&i| flat.coverage.counts[i] > 0)
        .all(|i| (flat.virtual_image.data()[i] - 0.37).abs() < 1e-12);
    check(
        interior_ok && counts_ok && avg_err < 1e-10 && constant_ok,
        format!("interior coverage 9: {interior_ok}, avg err {avg_err:.1e}, constant region: {constant_ok}"),
    )
}

fn feature_geometry() -> Outcome {
    let net = ResNet50::new(&ResNetWeights::random(5)).map_err(|e| e.to_string())?;
    let mut r = rng::seeded(6);
    let image = random_grid(PATCH_SIDE, PATCH_SIDE, &mut r);
    let taps = net.stage_taps(&image).map_err(|e| e.to_string())?;
    let mut shapes_ok = true;
    let mut gap_err: f64 = 0.0;
    let mut direct = Vec::new();
    for (i, m) in taps.maps.iter().enumerate() {
        shapes_ok &= (m.height, m.width, m.channels) == (TAP_SIDES[i], TAP_SIDES[i], STAGE_FEATURES[i]);
        let pooled = m.global_average_pool();
        for (c, p) in pooled.iter().enumerate() {
            let plane = m.plane(c);
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64;
            gap_err = gap_err.max((p - mean).abs());
        }
        direct.extend(pooled);
    }
    let fv = net
        .extract_features(&image, ViewName::CC, SourceTag::FFDM)
        .map_err(|e| e.to_string())?;
    let same = fv.values == direct;
    let view = |v: ViewName, s: SourceTag| lesion_core::deep_features::FeatureVector {
        values: fv.values.clone(),
        source: s,
        view: v,
    };
    let two = case_feature_vector(&[
        view(ViewName::CC, SourceTag::FFDM),
        view(ViewName::MLO, SourceTag::FFDM),
    ])
    .map_err(|e| e.to_string())?;
    let four = case_feature_vector(&[
        view(ViewName::CC, SourceTag::FFDM),
        view(ViewName::MLO, SourceTag::FFDM),
        view(ViewName::CC, SourceTag::Virtual),
        view(ViewName::MLO, SourceTag::Virtual),
    ])
    .map_err(|e| e.to_string())?;
    let lens = (fv.values.len(), two.values.len(), four.values.len());
    check(
        shapes_ok && same && gap_err < 1e-10 && lens == (FEATURES_PER_VIEW, 7680, 15360) && lens.0 == 3840,
        format!("tap shapes ok: {shapes_ok}, lengths {lens:?}, pooling err {gap_err:.1e}"),
    )
}

fn gini() -> Outcome {
    let g = |p: &[f64]| gini_impurity(p).unwrap();
    let mut ok = (g(&[0.5, 0.5]) - 0.5).abs() < 1e-12 && g(&[1.0, 0.0]).abs() < 1e-12;
    let mut r = rng::seeded(8);
    for j in 2..=4usize {
        let uniform = g(&vec![1.0 / j as f64; j]);
        ok &= (uniform - (1.0 - 1.0 / j as f64)).abs() < 1e-12;
        for _ in 0..200 {
            let raw: Vec<f64> = (0..j).map(|_| r.gen_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
            ok &= g(&p) <= uniform + 1e-12;
        }
    }
    check(ok, "examples and uniform maximality for J = 2..4".into())
}

/// 200 samples, strictly separable on feature 0, three more informative
/// features and one pure-noise feature in the last column.
fn separable_set(seed: u64) -> (Matrix, Vec<Label>) {
    let mut r = rng::seeded(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..200 {
        let label = if i % 2 == 0 { Label::Cancer } else { Label::Benign };
        let sign = if label.is_cancer() { 1.0 } else { -1.0 };
        let mut row = vec![sign * r.gen_range(0.5..1.5)];
        for _ in 0..3 {
            row.push(sign * 0.5 + r.gen_range(-1.0..1.0));
        }
        row.push(r.gen_range(-1.0..1.0));
        rows.push(row);
        labels.push(label);
    }
    (Matrix::from_rows(&rows).unwrap(), labels)
}

fn gbt_behavior() -> Outcome {
    const SEEDS: u64 = 10;
    let t = Instant::now();
    let mut min_acc: f64 = 1.0;
    let mut max_sum_err: f64 = 0.0;
    let mut noise = 0.0;
    for seed in 0..SEEDS {
        let (x, y) = separable_set(seed);
        let config = GbtConfig {
            n_trees: 21,
            max_depth: 3,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 2,
            learning_rate: 0.1,
            rng_seed: seed,
            ..GbtConfig::default()
        };
        let model = gbt::fit(&x, &y, &config).map_err(|e| e.to_string())?;
        let p = model.predict_matrix(&x).map_err(|e| e.to_string())?;
        let correct = p.iter().zip(&y).filter(|(p, l)| (**p >= 0.5) == l.is_cancer()).count();
        min_acc = min_acc.min(correct as f64 / y.len() as f64);
        let imp = model.feature_importance();
        max_sum_err = max_sum_err.max((imp.scores.iter().sum::<f64>() - 1.0).abs());
        noise += imp.scores[x.cols() - 1];
    }
    noise /= SEEDS as f64;
    let elapsed = t.elapsed();
    check(
        min_acc >= 0.99 && max_sum_err <= 1e-9 && noise < 0.05 && elapsed < Duration::from_secs(30),
        format!(
            "min train acc {min_acc:.3}, importance sum err {max_sum_err:.1e}, noise importance {noise:.4}, {elapsed:.1?}"
        ),
    )
}

fn auc_oracle() -> Outcome {
    let mut r = rng::seeded(12);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.gen_range(2..60);
        let mut labels: Vec<Label> = (0..n)
            .map(|_| if r.gen_bool(0.4) { Label::Cancer } else { Label::Benign })
            .collect();
        labels[0] = Label::Cancer;
        labels[1] = Label::Benign;
        // one-decimal scores force ties
        let scores: Vec<f64> = (0..n)
            .map(|_| (r.gen_range(0.0..1.0f64) * 10.0).round() / 10.0)
            .collect();
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in (0..n).filter(|&i| labels[i].is_cancer()) {
            for j in (0..n).filter(|&j| !labels[j].is_cancer()) {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let auc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?.auc;
        worst = worst.max((auc - wins / pairs).abs());
    }
    check(
        worst <= 1e-12,
        format!("max |trapezoid - pairwise| {worst:.1e} over 100 instances"),
    )
}

fn cv_discipline() -> Outcome {
    let n = 23;
    let labels: Vec<Label> = (0..n)
        .map(|i| if i % 3 == 0 { Label::Cancer } else { Label::Benign })
        .collect();
    let loo = make_folds(&labels, FoldScheme::LeaveOneOut, 1).map_err(|e| e.to_string())?;
    let mut tested = vec![0; n];
    for f in 0..loo.n_folds {
        for i in loo.test_indices(f) {
            tested[i] += 1;
        }
    }
    let loo_ok = loo.n_folds == n && tested.iter().all(|&c| c == 1);

    let (cancer, benign) = (30usize, 59usize);
    let mut labels = vec![Label::Cancer; cancer];
    labels.extend(vec![Label::Benign; benign]);
    let mut strat_ok = true;
    for seed in 0..20 {
        let plan = make_folds(&labels, FoldScheme::Stratified { k: 10 }, seed).map_err(|e| e.to_string())?;
        strat_ok &= plan.n_folds == 10;
        for f in 0..10 {
            let test = plan.test_indices(f);
            let c = test.iter().filter(|&&i| labels[i].is_cancer()).count() as f64;
            let b = test.len() as f64 - c;
            strat_ok &= (c - cancer as f64 / 10.0).abs() <= 1.0 && (b - benign as f64 / 10.0).abs() <= 1.0;
        }
    }
    check(
        loo_ok && strat_ok,
        format!(
            "LOOCV {} folds, each case once: {loo_ok}; stratified 30/59 within ±1: {strat_ok}",
            loo.n_folds
        ),
    )
}

fn lesion(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lesion"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`lesion {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// preprocess, train-shallow, synthesize, extract and evaluate on a fresh
/// synthetic dataset; returns the AUCs for FFDM and FFDM+VIRTUAL.
fn pipeline(dir: &Path) -> Result<(f64, f64), String> {
    std::fs::write(
        dir.join("config.json"),
        r#"{"pairs_per_image": 800, "validation_cases": 4, "shallow": {"epochs": 8, "patience": null}}"#,
    )
    .map_err(|e| e.to_string())?;
    let cases = FixtureSpec::default().cases.to_string();
    let steps: [&[&str]; 8] = [
        &["make-synthetic-dataset", "--out", "data", "--cases", &cases],
        &[
            "train-shallow",
            "--manifest",
            "data/manifest.json",
            "--out",
            "model",
            "--config",
            "config.json",
        ],
        &[
            "synthesize",
            "--manifest",
            "data/manifest.json",
            "--model",
            "model/model.json",
            "--out",
            "synth",
            "--config",
            "config.json",
        ],
        &["preprocess", "--manifest", "synth/manifest.json", "--out", "patches"],
        &["gen-random-weights", "--out", "weights"],
        &[
            "extract",
            "--index",
            "patches/index.json",
            "--weights",
            "weights/resnet50.json",
            "--sources",
            "FFDM,VIRTUAL",
            "--out",
            "features",
        ],
        &[
            "evaluate",
            "--features",
            "features/features.csv",
            "--sources",
            "FFDM",
            "--out",
            "eval_ffdm",
        ],
        &[
            "evaluate",
            "--features",
            "features/features.csv",
            "--sources",
            "FFDM,VIRTUAL",
            "--out",
            "eval_ffdm_virtual",
        ],
    ];
    for args in steps {
        lesion(dir, args)?;
    }
    let auc = |sub: &str| -> Result<f64, String> {
        let text = std::fs::read_to_string(dir.join(sub).join("report.json")).map_err(|e| e.to_string())?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        v["pooled_roc"]["auc"]
            .as_f64()
            .ok_or_else(|| "report lacks pooled_roc.auc".to_string())
    };
    Ok((auc("eval_ffdm")?, auc("eval_ffdm_virtual")?))
}

fn tree_contents(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn end_to_end() -> Outcome {
    const BUDGET: Duration = Duration::from_secs(300);
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = Instant::now();
    let (ffdm, combined) = pipeline(a.path())?;
    let first = t.elapsed();
    let again = pipeline(b.path())?;
    let second = t.elapsed() - first;
    let (ta, tb) = (tree_contents(a.path()), tree_contents(b.path()));
    let differing: Vec<String> = ta
        .keys()
        .chain(tb.keys())
        .filter(|k| ta.get(*k) != tb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let identical = differing.is_empty() && again == (ffdm, combined);
    check(
        combined >= ffdm && identical && first < BUDGET && second < BUDGET,
        format!(
            "AUC FFDM {ffdm:.4}, FFDM+VIRTUAL {combined:.4}; {} files identical: {identical}{}; runs {first:.1?} / {second:.1?}",
            ta.len(),
            if differing.is_empty() { String::new() } else { format!(" (differ: {})", differing.join(", ")) }
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient check", gradient_check),
        ("parameter budget", parameter_budget),
        ("identity learning", identity_learning),
        ("synthesis assembly", synthesis_assembly),
        ("feature geometry", feature_geometry),
        ("gini impurity", gini),
        ("boosted trees", gbt_behavior),
        ("auc oracle", auc_oracle),
        ("cv discipline", cv_discipline),
        ("end to end", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (status, detail) = match std::panic::catch_unwind(run) {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(d)) => ("FAIL", d),
            Err(_) => ("FAIL", "panicked".to_string()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {:>2} {status} {name}: {detail}", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
