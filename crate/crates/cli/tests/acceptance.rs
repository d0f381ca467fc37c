//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p windcorr-cli --release --test acceptance`.
//! Numeric arguments restrict the run to those criteria, e.g.
//! `cargo test --test acceptance -- 1 2 3`.
//!
//! Failures are reported but only fail the process when
//! `WINDCORR_ACCEPTANCE_STRICT=1` is set.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::{Datelike, NaiveDate, TimeZone, Utc};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use windcorr::continual::{run_strategies, FinetuneConfig, NewData, Strategy, StrategyReport};
use windcorr::datagen::{generate_farm, generate_farm_shifted, BiasProfile, FarmConfig, RegimeShift};
use windcorr::eval::{compute_metrics, percent_of};
use windcorr::gbdt::{fit_gb, GbConfig, Node, Tree};
use windcorr::models::{baseline_forecast, train_forecaster, ModelConfig, ModelKind};
use windcorr::nnet::{cnn_spec, nn_spec, param_count, AdamConfig, LayerSpec, Mode, ModelSpec, Shape, TrainedModel};
use windcorr::sampler::{prepare_farm, run_length, DayAssignment, Partition, PreparedFarm};

type Check = fn() -> Result<String, String>;

const CAPACITY_KW: f64 = 2100.0;

// criterion 1
const NN_PARAMS: usize = 5185;
const CNN_PARAMS: usize = 81_593;
const PARAM_COUNT_BUDGET: Duration = Duration::from_secs(1);

// criterion 2: (RMSE kW, NRMSE %)
const RMSE_NRMSE_PAIRS: [(f64, f64); 5] = [(725.1, 34.5), (519.1, 24.7), (476.9, 22.7), (462.9, 22.0), (462.3, 22.0)];
const NRMSE_TOL_PP: f64 = 0.05;

// criterion 3
const CNN_RMSE: f64 = 462.9;
const BASELINE_RMSE: f64 = 725.1;
const RELATIVE_RANGE: (f64, f64) = (63.8, 63.9);
const RELATIVE_REPORTED: f64 = 63.9;
const RELATIVE_TOL_PP: f64 = 0.1;

// criterion 4
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const FD_FLOOR: f64 = 1e-6;
const FD_SEEDS: u64 = 20;
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);

// criterion 5
const GB_DATASETS: usize = 150;
const GB_REL_TOL: f64 = 1e-12;

// criterion 6
const SPLIT_FARMS: u64 = 4;
const SPLIT_SEEDS_PER_FARM: u64 = 50;
const RUN_LENGTH_TOL_DAYS: f64 = 1.0;

// criterion 7
const E2E_DAYS: u32 = 182;
const E2E_DIURNAL_MS: f64 = 2.0;
const MIN_DAY_NIGHT_GAP_KW: f64 = 100.0;
const MAX_MB_FRACTION: f64 = 0.2;
const E2E_BUDGET: Duration = Duration::from_secs(15 * 60);

// criterion 8
const SHIFT_DAYS: u32 = 182;
const SHIFT_WEEKS: u32 = 6;
const SHIFT_DIURNAL_MS: f64 = 3.5;
const SHIFT_OFFSET_MS: f64 = 1.5;
const MIN_CONTINUAL_GAIN: f64 = 0.05;

// criterion 9
const DETERMINISM_DAYS: &str = "40";
const DETERMINISM_EPOCHS: &str = "3";

fn main() {
    let only: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, Check); 9] = [
        (1, "parameter counts", parameter_counts),
        (2, "NRMSE arithmetic", nrmse_arithmetic),
        (3, "relative error arithmetic", relative_arithmetic),
        (4, "gradient oracle", gradient_oracle),
        (5, "gradient boosting oracle", gb_oracle),
        (6, "split invariants", split_invariants),
        (7, "end-to-end bias correction", end_to_end),
        (8, "continual learning ordering", continual_ordering),
        (9, "determinism", determinism),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        if std::env::var("WINDCORR_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn parameter_counts() -> Result<String, String> {
    let start = Instant::now();
    let nn = param_count(&nn_spec()).map_err(|e| e.to_string())?;
    let cnn = param_count(&cnn_spec()).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(nn == NN_PARAMS, || format!("nn has {nn} parameters, expected {NN_PARAMS}"))?;
    ensure(cnn == CNN_PARAMS, || format!("cnn has {cnn} parameters, expected {CNN_PARAMS}"))?;
    ensure(took < PARAM_COUNT_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("nn {nn}, cnn {cnn}"))
}

fn nrmse_arithmetic() -> Result<String, String> {
    let truth = vec![vec![1000.0; 49]; 3];
    let mut worst: f64 = 0.0;
    for (rmse, expected) in RMSE_NRMSE_PAIRS {
        let preds: Vec<Vec<f64>> = truth.iter().map(|t| t.iter().map(|v| v + rmse).collect()).collect();
        let r = compute_metrics(&preds, &truth, CAPACITY_KW).map_err(|e| e.to_string())?;
        let diff = (r.nrmse - expected).abs();
        worst = worst.max(diff);
        ensure(diff <= NRMSE_TOL_PP, || format!("RMSE {rmse} gives NRMSE {:.4}, expected {expected}", r.nrmse))?;
    }
    Ok(format!("worst deviation {worst:.4} pp"))
}

fn relative_arithmetic() -> Result<String, String> {
    let p = percent_of(CNN_RMSE, BASELINE_RMSE);
    ensure((RELATIVE_RANGE.0..=RELATIVE_RANGE.1).contains(&p), || format!("{p:.4}% outside range"))?;
    ensure((p - RELATIVE_REPORTED).abs() <= RELATIVE_TOL_PP, || format!("{p:.4}% vs {RELATIVE_REPORTED}"))?;
    Ok(format!("{p:.4}%"))
}

fn gradient_specs() -> Vec<(&'static str, ModelSpec)> {
    let adam = AdamConfig::with_lr(0.01);
    vec![
        (
            "dense+batchnorm",
            ModelSpec {
                input_shape: Shape::Flat(5),
                layers: vec![LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::batchnorm(), LayerSpec::dense(3)],
                optimizer: adam.clone(),
            },
        ),
        (
            "conv1d+batchnorm",
            ModelSpec {
                input_shape: Shape::Seq { len: 7, channels: 3 },
                layers: vec![
                    LayerSpec::conv1d(4, 3, 2),
                    LayerSpec::relu(),
                    LayerSpec::batchnorm(),
                    LayerSpec::Flatten,
                    LayerSpec::dense(2),
                ],
                optimizer: adam.clone(),
            },
        ),
        (
            "bilstm+batchnorm",
            ModelSpec {
                input_shape: Shape::Seq { len: 5, channels: 3 },
                layers: vec![LayerSpec::bilstm(4), LayerSpec::batchnorm(), LayerSpec::dense(2)],
                optimizer: adam.clone(),
            },
        ),
        (
            "bilstm sequence+batchnorm",
            ModelSpec {
                input_shape: Shape::Seq { len: 5, channels: 3 },
                layers: vec![
                    LayerSpec::bilstm_seq(3),
                    LayerSpec::dense(4),
                    LayerSpec::relu(),
                    LayerSpec::batchnorm(),
                    LayerSpec::dense(1),
                    LayerSpec::Flatten,
                ],
                optimizer: adam,
            },
        ),
    ]
}

fn train_loss(model: &TrainedModel, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model.loss_and_gradient(x.view(), y.view(), Mode::Train, &mut rng).unwrap().0
}

fn gradient_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut report = Vec::new();
    for (name, spec) in gradient_specs() {
        let mut worst: f64 = 0.0;
        for seed in 0..FD_SEEDS {
            let mut model = TrainedModel::init(&spec, seed).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let x = Array2::from_shape_fn((6, model.input_size()), |_| rng.random_range(-1.5..1.5));
            let y = Array2::from_shape_fn((6, model.output_size()), |_| rng.random_range(-1.0..1.0));
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let (_, grad, _) = model.loss_and_gradient(x.view(), y.view(), Mode::Train, &mut r).unwrap();
            for (i, &analytic) in grad.iter().enumerate() {
                let orig = model.params[i];
                model.params[i] = orig + FD_STEP;
                let up = train_loss(&model, &x, &y);
                model.params[i] = orig - FD_STEP;
                let down = train_loss(&model, &x, &y);
                model.params[i] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
                worst = worst.max(rel);
            }
        }
        ensure(worst < FD_REL_TOL, || format!("{name}: worst relative error {worst:.2e}"))?;
        report.push(format!("{name} {worst:.1e}"));
    }
    let took = start.elapsed();
    ensure(took < GRADIENT_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("worst relative error: {}", report.join(", ")))
}

/// Exhaustive-search regression tree: every midpoint of every feature, the
/// first candidate wins unless a later one is better by more than the tie
/// tolerance.
enum RefTree {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<RefTree>,
        right: Box<RefTree>,
    },
}

impl RefTree {
    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            RefTree::Leaf(v) => *v,
            RefTree::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }
}

fn sse(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

fn ref_tree(rows: &[Vec<f64>], resid: &[f64], idx: &[usize], depth: usize, max_depth: usize) -> RefTree {
    let vals: Vec<f64> = idx.iter().map(|&i| resid[i]).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let parent = sse(&vals);
    if depth == max_depth || idx.len() < 2 || parent / idx.len() as f64 <= f64::EPSILON {
        return RefTree::Leaf(mean);
    }
    let tol = 1e-10 * parent;
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..rows[0].len() {
        let mut uniq: Vec<f64> = idx.iter().map(|&i| rows[i][f]).collect();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        for w in uniq.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][f] <= t);
            let lv: Vec<f64> = l.iter().map(|&i| resid[i]).collect();
            let rv: Vec<f64> = r.iter().map(|&i| resid[i]).collect();
            let child = sse(&lv) + sse(&rv);
            let better = match best {
                None => parent - child > tol,
                Some((b, _, _)) => child < b - tol,
            };
            if better {
                best = Some((child, f, t));
            }
        }
    }
    match best {
        None => RefTree::Leaf(mean),
        Some((_, f, t)) => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][f] <= t);
            RefTree::Split {
                feature: f,
                threshold: t,
                left: Box::new(ref_tree(rows, resid, &l, depth + 1, max_depth)),
                right: Box::new(ref_tree(rows, resid, &r, depth + 1, max_depth)),
            }
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= GB_REL_TOL * a.abs().max(b.abs()).max(1.0)
}

fn same_tree(t: &Tree, i: usize, r: &RefTree) -> Result<(), String> {
    match (&t.nodes[i], r) {
        (Node::Leaf { value }, RefTree::Leaf(v)) if close(*value, *v) => Ok(()),
        (
            Node::Split {
                feature,
                threshold,
                left,
                right,
            },
            RefTree::Split {
                feature: rf,
                threshold: rt,
                left: rl,
                right: rr,
            },
        ) if feature == rf && close(*threshold, *rt) => {
            same_tree(t, *left, rl)?;
            same_tree(t, *right, rr)
        }
        (a, _) => Err(format!("node {i} differs: {a:?}")),
    }
}

fn gb_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut splits = 0;
    for case in 0..GB_DATASETS {
        let n = rng.random_range(2..=50);
        let d = rng.random_range(1..=4);
        let coarse: Vec<bool> = (0..d).map(|_| rng.random_bool(0.5)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|j| if coarse[j] { rng.random_range(0..4) as f64 } else { rng.random_range(-3.0..3.0) })
                    .collect()
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let cfg = GbConfig {
            n_stages: rng.random_range(1..=3),
            max_depth: rng.random_range(1..=2),
            learning_rate: rng.random_range(0.05..1.0),
            ..GbConfig::default()
        };
        let x = Array2::from_shape_fn((n, d), |(i, j)| rows[i][j]);
        let (ens, _) = fit_gb(x.view(), &y, &cfg).map_err(|e| e.to_string())?;
        let mut pred = vec![y.iter().sum::<f64>() / n as f64; n];
        ensure(close(ens.base_prediction, pred[0]), || format!("dataset {case}: base prediction"))?;
        ensure(ens.trees.len() == cfg.n_stages, || format!("dataset {case}: stage count"))?;
        let idx: Vec<usize> = (0..n).collect();
        for (s, tree) in ens.trees.iter().enumerate() {
            let resid: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
            let reference = ref_tree(&rows, &resid, &idx, 0, cfg.max_depth);
            same_tree(tree, 0, &reference).map_err(|e| format!("dataset {case} stage {s}: {e}"))?;
            splits += tree.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count();
            for (p, row) in pred.iter_mut().zip(&rows) {
                *p += cfg.learning_rate * reference.predict(row);
            }
        }
    }
    Ok(format!("{GB_DATASETS} datasets, {splits} splits matched"))
}

fn check_split(farm: &PreparedFarm, seed: u64) -> Result<(), String> {
    let mut months: BTreeMap<(i32, u32), Vec<(NaiveDate, Partition)>> = BTreeMap::new();
    for (&day, &p) in &farm.days.days {
        months.entry((day.year(), day.month())).or_default().push((day, p));
    }
    for ((y, m), days) in &months {
        let n = days.len();
        for part in [Partition::Validation, Partition::Test] {
            let run: Vec<NaiveDate> = days.iter().filter(|(_, p)| *p == part).map(|(d, _)| *d).collect();
            let len = run.len();
            ensure((len as f64 - 0.2 * n as f64).abs() <= RUN_LENGTH_TOL_DAYS, || {
                format!("seed {seed} {y}-{m:02}: {part:?} run of {len} days in a {n}-day month")
            })?;
            ensure(len == run_length(n), || format!("seed {seed} {y}-{m:02}: {part:?} has {len} days"))?;
            ensure(run.windows(2).all(|w| w[1] == w[0].succ_opt().unwrap()), || {
                format!("seed {seed} {y}-{m:02}: {part:?} days not consecutive")
            })?;
        }
    }
    let mut maps = Vec::new();
    for (id, t) in &farm.turbines {
        let n = t.samples.len();
        let mut seen = vec![0u8; n];
        for p in [Partition::Train, Partition::Validation, Partition::Test] {
            for &i in t.split.indices(p) {
                seen[i] += 1;
                ensure(farm.days.partition_of(t.samples[i].t0) == Some(p), || {
                    format!("seed {seed} {id}: sample {i} in the wrong partition")
                })?;
            }
        }
        ensure(seen.iter().all(|&c| c == 1), || format!("seed {seed} {id}: partitions overlap or miss samples"))?;
        let map: BTreeMap<NaiveDate, Partition> = t
            .samples
            .iter()
            .map(|s| (s.t0.date_naive(), farm.days.partition_of(s.t0).unwrap()))
            .collect();
        maps.push(map);
    }
    for w in maps.windows(2) {
        for (day, p) in &w[0] {
            if let Some(q) = w[1].get(day) {
                ensure(p == q, || format!("seed {seed}: turbines disagree on {day}"))?;
            }
        }
    }
    let redrawn = DayAssignment::for_samples(farm.turbines.values().flat_map(|t| &t.samples), seed)
        .map_err(|e| e.to_string())?;
    ensure(redrawn == farm.days, || format!("seed {seed}: day map not reproducible"))
}

fn split_invariants() -> Result<String, String> {
    let mut runs = 0;
    for f in 0..SPLIT_FARMS {
        // different start dates and lengths so partial and 28-31 day months occur
        let cfg = FarmConfig {
            n_turbines: 2,
            duration_days: 45 + 17 * f as u32,
            start_time: Utc.with_ymd_and_hms(2021, 1 + 3 * f as u32, 1 + 9 * f as u32, 0, 0, 0).unwrap(),
            rng_seed: 100 + f,
            ..FarmConfig::default()
        };
        let d = generate_farm(&cfg, &BiasProfile::default()).map_err(|e| e.to_string())?;
        for s in 0..SPLIT_SEEDS_PER_FARM {
            let seed = f * 1000 + s;
            let farm = prepare_farm(&d.nwp, &d.scada, &cfg.sample_context(), cfg.capacity_kw, seed, false)
                .map_err(|e| e.to_string())?;
            check_split(&farm, seed)?;
            runs += 1;
        }
    }
    Ok(format!("{runs} seeded runs"))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_windcorr"))
        .args(args)
        .env_remove("WINDCORR_DATA_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("windcorr {} exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr))
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            Ok(headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, col: &str) -> f64 {
    row[col].parse().unwrap()
}

/// Runs generate, prepare, train and evaluate under `root`.
fn pipeline(root: &Path, generate: &[&str], kinds: &[&str], train_extra: &[&str]) -> Result<(), String> {
    let p = |n: &str| root.join(n);
    let data = p("data");
    let mut args = vec!["generate", "--out", s(&data)];
    args.extend_from_slice(generate);
    cli(&args)?;
    let (prep, models) = (p("prep"), p("models"));
    cli(&["prepare", "--data", s(&data), "--out", s(&prep)])?;
    for kind in kinds {
        let mut args = vec!["train", "--kind", kind, "--prepared", s(&prep), "--out", s(&models)];
        args.extend_from_slice(train_extra);
        cli(&args)?;
    }
    cli(&["evaluate", "--models", s(&models), "--prepared", s(&prep), "--out", s(&p("ev"))])
}

fn end_to_end() -> Result<String, String> {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let config = serde_json::json!({
        "schema_version": 1,
        "farm": { "n_turbines": 2, "duration_days": E2E_DAYS },
        "bias": { "diurnal_amplitude_ms": E2E_DIURNAL_MS },
    });
    let cfg_path = root.join("farm.json");
    fs::write(&cfg_path, config.to_string()).map_err(|e| e.to_string())?;
    pipeline(root, &["--config", s(&cfg_path)], &["nn", "cnn", "lstm"], &[])?;
    let took = start.elapsed();
    let ev = root.join("ev");

    let hours = read_csv(&ev.join("bias_local_hour_baseline.csv"))?;
    let (mut day, mut night) = ((0.0, 0.0), (0.0, 0.0));
    for h in &hours {
        let (bin, n, bias) = (num(h, "bin") as u32, num(h, "n"), num(h, "mean_bias"));
        let acc = if (6..18).contains(&bin) { &mut day } else { &mut night };
        acc.0 += n * bias;
        acc.1 += n;
    }
    let gap = day.0 / day.1 - night.0 / night.1;

    let summary: BTreeMap<String, BTreeMap<String, String>> =
        read_csv(&ev.join("error_summary.csv"))?.into_iter().map(|r| (r["model"].clone(), r)).collect();
    let per_turbine = read_csv(&ev.join("metrics.csv"))?;
    let base = summary.get("baseline").ok_or("no baseline row")?;
    let (base_mb, base_nrmse) = (num(base, "mb"), num(base, "nrmse"));
    let mut notes = vec![format!(
        "day-night gap {gap:.1} kW; baseline MB {base_mb:.1} NRMSE {base_nrmse:.2}"
    )];
    let mut problems = Vec::new();
    if gap.abs() <= MIN_DAY_NIGHT_GAP_KW {
        problems.push(format!("day-night gap {gap:.1} kW"));
    }
    for kind in ["nn", "cnn", "lstm"] {
        let row = summary.get(kind).ok_or_else(|| format!("no {kind} row"))?;
        let (mb, nrmse) = (num(row, "mb"), num(row, "nrmse"));
        let turbines: Vec<String> = per_turbine
            .iter()
            .filter(|r| r["model"] == kind)
            .map(|r| format!("{} {:.1}", r["turbine"], num(r, "mb")))
            .collect();
        notes.push(format!("{kind} MB {mb:.1} ({}) NRMSE {nrmse:.2}", turbines.join(", ")));
        if mb.abs() > MAX_MB_FRACTION * base_mb.abs() {
            problems.push(format!("{kind} |MB| {:.1} > {:.1}", mb.abs(), MAX_MB_FRACTION * base_mb.abs()));
        }
        if nrmse >= base_nrmse {
            problems.push(format!("{kind} NRMSE {nrmse:.2} not below baseline"));
        }
    }
    if took > E2E_BUDGET {
        problems.push(format!("took {took:?}"));
    }
    let detail = notes.join("; ");
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", problems.join("; ")))
    }
}

fn continual_ordering() -> Result<String, String> {
    let cfg = FarmConfig {
        n_turbines: 1,
        duration_days: SHIFT_DAYS,
        ..FarmConfig::default()
    };
    let bias = BiasProfile {
        diurnal_amplitude_ms: 2.0,
        ..BiasProfile::default()
    };
    let start_day = SHIFT_DAYS - 7 * SHIFT_WEEKS;
    let shift = RegimeShift {
        start_day,
        bias: BiasProfile {
            diurnal_amplitude_ms: SHIFT_DIURNAL_MS,
            offset_ms: SHIFT_OFFSET_MS,
            ..BiasProfile::default()
        },
    };
    let d = generate_farm_shifted(&cfg, &bias, &shift).map_err(|e| e.to_string())?;
    let cut = cfg.start_time + chrono::Duration::days(start_day as i64);
    // old samples end before the shift; new ones start after it
    let old: Vec<_> = d.nwp.iter().filter(|r| r.issue_time + chrono::Duration::hours(48) < cut).cloned().collect();
    let new: Vec<_> = d.nwp.iter().filter(|r| r.issue_time >= cut).cloned().collect();
    let ctx = cfg.sample_context();
    let old = prepare_farm(&old, &d.scada, &ctx, cfg.capacity_kw, 0, false).map_err(|e| e.to_string())?;
    let new = prepare_farm(&new, &d.scada, &ctx, cfg.capacity_kw, 0, false).map_err(|e| e.to_string())?;
    let ot = old.turbines.values().next().unwrap();
    let nt = new.turbines.values().next().unwrap();
    let (train, val) = (ot.part(Partition::Train), ot.part(Partition::Validation));
    let (ntrain, nval, ntest) = (nt.part(Partition::Train), nt.part(Partition::Validation), nt.part(Partition::Test));

    let mut results: Vec<(ModelKind, StrategyReport)> = Vec::new();
    for kind in [ModelKind::Nn, ModelKind::Cnn, ModelKind::Lstm] {
        let c = ModelConfig::default_for(kind);
        let original = train_forecaster(&c, &train, &val, &ot.normalizer, &d.truth_curve).map_err(|e| e.to_string())?;
        let data = NewData {
            train: &ntrain,
            val: &nval,
            test: &ntest,
        };
        let r = run_strategies(&original, &c, data, &FinetuneConfig::default(), &d.truth_curve)
            .map_err(|e| e.to_string())?;
        results.push((kind, r));
    }

    let truth: Vec<Vec<f64>> = ntest.iter().map(|x| x.targets.clone()).collect();
    let preds: Vec<Vec<f64>> = ntest.iter().map(|x| baseline_forecast(x, &d.truth_curve)).collect();
    let baseline = compute_metrics(&preds, &truth, cfg.capacity_kw).map_err(|e| e.to_string())?;
    let mut notes = vec![format!("baseline {:.1}", baseline.rmse)];
    let mut problems = Vec::new();
    for (kind, r) in &results {
        if r.baseline != baseline {
            problems.push(format!("{kind}: baseline row differs"));
        }
        let get = |s| r.rmse(s).unwrap();
        let (orig, retrain, cont) = (get(Strategy::Original), get(Strategy::Retrain), get(Strategy::Continual));
        notes.push(format!("{kind} original {orig:.1} retrain {retrain:.1} continual {cont:.1}"));
        if !(cont <= retrain && retrain <= orig) {
            problems.push(format!("{kind}: ordering violated"));
        }
        if cont > (1.0 - MIN_CONTINUAL_GAIN) * orig {
            problems.push(format!("{kind}: continual gain {:.1}%", 100.0 * (1.0 - cont / orig)));
        }
    }
    let detail = notes.join("; ");
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", problems.join("; ")))
    }
}

/// Every file under `dir` except run manifests, which carry wall-clock times.
fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let roots = [tmp.path().join("a"), tmp.path().join("b")];
    for root in &roots {
        pipeline(
            root,
            &["--days", DETERMINISM_DAYS, "--turbines", "2", "--seed", "3"],
            &["gb", "nn", "cnn", "lstm"],
            &["--max-epochs", DETERMINISM_EPOCHS],
        )?;
    }
    let mut compared = 0;
    for stage in ["data", "prep", "models", "ev"] {
        let (a, b) = (files(&roots[0].join(stage)), files(&roots[1].join(stage)));
        ensure(a.keys().eq(b.keys()), || format!("{stage}: different file sets"))?;
        for (name, bytes) in &a {
            ensure(b[name] == *bytes, || format!("{stage}/{} differs", name.display()))?;
        }
        compared += a.len();
    }
    Ok(format!("{compared} files byte-identical across two runs"))
}
