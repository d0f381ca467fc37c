use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;
use windcorr::continual::{finetune, run_strategies, FinetuneConfig, NewData, StrategyReport};
use windcorr::curve::PowerCurve;
use windcorr::datagen::generate_farm_with_curve;
use windcorr::eval::{
    bias_table, compute_metrics, fmt, observations, paired_bootstrap_se, write_comparison_csv,
    write_error_summary_csv, write_relative_summary_csv, BiasDimension, FarmResults,
};
use windcorr::ingest::{parse_nwp, parse_scada, write_nwp, write_scada, NwpRecord, ScadaRecord};
use windcorr::models::{random_search, train_forecaster, write_trial_log, Forecaster, ModelConfig, ModelError, ModelKind};
use windcorr::sampler::{prepare_farm, ForecastSample, Partition, PreparedTurbine};

use crate::args::*;
use crate::config::{self, FinetuneConfigFile, GenerateConfig, ModelConfigFile, SearchSpaceFile, SiteConfig};
use crate::error::{CliError, Result};
use crate::manifest::{list_files, read_manifest, verify_outputs, ManifestBuilder, MANIFEST_FILE};
use crate::prepared::{self, Prepared};

pub const NWP_FILE: &str = "nwp.csv";
/// Model config stored next to each trained model kind.
pub const CONFIG_FILE: &str = "config.json";

pub fn scada_file(id: &str) -> String {
    format!("scada_{id}.csv")
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Prepare(a) => prepare(&a),
        Command::Train(a) => train(&a),
        Command::Search(a) => search(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Finetune(a) => finetune_cmd(&a),
        Command::CompareStrategies(a) => compare_strategies(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))
}

/// Empties a directory this tool wrote before, so reruns leave no stale
/// files. Refuses to touch a non-empty directory without a manifest.
fn reset_output_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let empty = fs::read_dir(dir).map_err(|e| CliError::read(dir, e))?.next().is_none();
        if !empty {
            if !dir.join(MANIFEST_FILE).exists() {
                return Err(CliError::config(format!(
                    "{} is not empty and was not written by this tool",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
        }
    }
    create_dir(dir)
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::write(path, e))
}

fn open_file(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::read(path, e))
}

// ---------------------------------------------------------------- generate

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("generate");
    let mut cfg: GenerateConfig = match &a.config {
        Some(p) => {
            m.config(p)?;
            config::load(p)?
        }
        None => GenerateConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.farm.rng_seed = s;
    }
    if let Some(d) = a.days {
        cfg.farm.duration_days = d;
    }
    if let Some(n) = a.turbines {
        cfg.farm.n_turbines = n;
    }
    let curve = cfg
        .curve
        .clone()
        .unwrap_or_else(|| PowerCurve::synthetic(3.0, 12.0, 25.0, cfg.farm.capacity_kw));
    cfg.curve = Some(curve.clone());
    // everything is validated and simulated before anything touches disk
    let data = generate_farm_with_curve(&cfg.farm, &cfg.bias, cfg.shift.clone(), curve.clone())?;

    reset_output_dir(&a.out)?;
    for (id, records) in &data.scada {
        let path = a.out.join(scada_file(id));
        write_scada(create_file(&path)?, records).map_err(|e| CliError::write(&path, e))?;
    }
    let path = a.out.join(NWP_FILE);
    write_nwp(create_file(&path)?, &data.nwp).map_err(|e| CliError::write(&path, e))?;

    let site = SiteConfig {
        context: cfg.farm.sample_context(),
        capacity_kw: cfg.farm.capacity_kw,
        curve,
        ..SiteConfig::default()
    };
    m.seed("farm", cfg.farm.rng_seed);
    m.settings(&GeneratedSettings {
        generate: &cfg,
        site: &site,
        turbine_offsets_ms: &data.turbine_offsets_ms,
    });
    m.finish(&a.out)?;
    log::info!(
        "wrote {} turbines, {} NWP records to {}",
        data.scada.len(),
        data.nwp.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct GeneratedSettings<'a> {
    generate: &'a GenerateConfig,
    site: &'a SiteConfig,
    turbine_offsets_ms: &'a [f64],
}

// ----------------------------------------------------------------- prepare

fn site_from_generate(dir: &Path) -> Option<SiteConfig> {
    let m = read_manifest(dir).ok()?;
    if m.command != "generate" {
        return None;
    }
    serde_json::from_value(m.settings.get("site")?.clone()).ok()
}

fn in_dates(t: NaiveDate, from: Option<NaiveDate>, to: Option<NaiveDate>) -> bool {
    from.is_none_or(|f| t >= f) && to.is_none_or(|l| t <= l)
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("prepare");
    let (scada_paths, nwp_path) = if !a.scada.is_empty() || a.nwp.is_some() {
        let nwp = a.nwp.clone().ok_or_else(|| CliError::config("--scada needs --nwp"))?;
        if a.scada.is_empty() {
            return Err(CliError::config("--nwp needs at least one --scada file"));
        }
        (a.scada.clone(), nwp)
    } else {
        let dir = a
            .data
            .as_ref()
            .ok_or_else(|| CliError::config(format!("give --data, {DATA_DIR_ENV}, or --scada and --nwp")))?;
        let scada: Vec<PathBuf> = list_files(dir)?
            .into_iter()
            .filter(|p| {
                p.parent() == Some(dir.as_path())
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("scada_") && n.ends_with(".csv"))
            })
            .collect();
        if scada.is_empty() {
            return Err(CliError::missing(format!("no scada_*.csv files in {}", dir.display())));
        }
        (scada, dir.join(NWP_FILE))
    };

    let site = match (&a.site, &a.data) {
        (Some(p), _) => {
            m.config(p)?;
            config::load(p)?
        }
        (None, Some(dir)) => site_from_generate(dir).unwrap_or_default(),
        (None, None) => SiteConfig::default(),
    };

    let mut notes = Vec::new();
    let mut scada: BTreeMap<String, Vec<ScadaRecord>> = BTreeMap::new();
    for p in &scada_paths {
        m.input(p)?;
        let parsed = parse_scada(open_file(p)?).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        if !parsed.rejected.is_empty() {
            notes.push(format!("{}: {} rows rejected", p.display(), parsed.rejected.len()));
        }
        for r in parsed.records {
            scada.entry(r.turbine_id.clone()).or_default().push(r);
        }
    }
    for records in scada.values_mut() {
        records.sort_by_key(|r| r.timestamp);
    }
    m.input(&nwp_path)?;
    let parsed = parse_nwp(open_file(&nwp_path)?).map_err(|e| CliError::data(format!("{}: {e}", nwp_path.display())))?;
    if !parsed.rejected.is_empty() {
        notes.push(format!("{}: {} rows rejected", nwp_path.display(), parsed.rejected.len()));
    }
    let nwp: Vec<NwpRecord> = parsed
        .records
        .into_iter()
        .filter(|r| in_dates(r.issue_time.date_naive(), a.from, a.to))
        .collect();
    if nwp.is_empty() {
        return Err(CliError::data("no NWP issuances in the requested date range"));
    }

    let farm = prepare_farm(&nwp, &scada, &site.context, site.capacity_kw, a.seed, a.strict_boundaries)?;
    for (id, t) in &farm.turbines {
        notes.extend(t.warnings.iter().map(|w| format!("{id}: {w}")));
    }
    for id in scada.keys().filter(|id| !farm.turbines.contains_key(*id)) {
        notes.push(format!("{id}: no complete forecast samples, skipped"));
    }
    let counts: BTreeMap<String, BTreeMap<&str, usize>> = farm
        .turbines
        .iter()
        .map(|(id, t)| {
            let c = [
                ("samples", t.samples.len()),
                ("train", t.split.train.len()),
                ("validation", t.split.validation.len()),
                ("test", t.split.test.len()),
            ];
            (id.clone(), c.into_iter().collect())
        })
        .collect();

    reset_output_dir(&a.out)?;
    let prepared = Prepared { site, farm };
    prepared::write(&a.out, &prepared)?;
    m.seed("split", a.seed);
    m.settings(&serde_json::json!({
        "from": a.from,
        "to": a.to,
        "strict_boundaries": a.strict_boundaries,
        "counts": counts,
    }));
    for n in notes {
        log::warn!("{n}");
        m.note(n);
    }
    m.finish(&a.out)?;
    Ok(())
}

// ------------------------------------------------------------------- train

fn select_turbines<'a>(prepared: &'a Prepared, wanted: &[String]) -> Result<Vec<(&'a String, &'a PreparedTurbine)>> {
    if wanted.is_empty() {
        return Ok(prepared.farm.turbines.iter().collect());
    }
    wanted
        .iter()
        .map(|id| prepared.farm.turbines.get_key_value(id).ok_or_else(|| CliError::config(format!("unknown turbine {id}"))))
        .collect()
}

fn thread_pool(n: usize) -> Result<rayon::ThreadPool> {
    if n == 0 {
        return Err(CliError::config("--parallel must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::new(crate::error::exit::FAILURE, e.to_string()))
}

fn load_model_config(path: &Path, kind: ModelKind) -> Result<ModelConfig> {
    let file: ModelConfigFile = config::load(path)?;
    if file.model.kind() != kind {
        return Err(CliError::config(format!(
            "{} holds a {} config, not {kind}",
            path.display(),
            file.model.kind()
        )));
    }
    Ok(file.model)
}

fn apply_train_overrides(cfg: &mut ModelConfig, seed: Option<u64>, max_epochs: Option<usize>) {
    if let Some(n) = cfg.neural_mut() {
        if let Some(s) = seed {
            n.train.rng_seed = s;
        }
        if let Some(e) = max_epochs {
            n.train.max_epochs = e;
        }
    }
}

#[derive(Serialize)]
struct TurbineRun {
    epochs: usize,
    val_rmse: f64,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("train");
    let mut cfg = match &a.config {
        Some(p) => {
            m.config(p)?;
            load_model_config(p, a.kind)?
        }
        None => ModelConfig::default_for(a.kind),
    };
    apply_train_overrides(&mut cfg, a.seed, a.max_epochs);
    let prepared = prepared::load(&a.prepared)?;
    m.input_dir(&a.prepared)?;
    let turbines = select_turbines(&prepared, &a.turbines)?;
    let curve = &prepared.site.curve;

    let pool = thread_pool(a.parallel)?;
    let trained: Vec<Result<(String, Forecaster, f64)>> = pool.install(|| {
        turbines
            .par_iter()
            .map(|(id, t)| {
                let (tr, va) = (t.part(Partition::Train), t.part(Partition::Validation));
                log::info!("training {} for {id} on {} samples", a.kind, tr.len());
                let f = train_forecaster(&cfg, &tr, &va, &t.normalizer, curve)
                    .map_err(|e| CliError::from(e).context(id))?;
                let val_rmse = if va.is_empty() {
                    f64::NAN
                } else {
                    windcorr::models::validation_rmse(&f, &va)?
                };
                Ok(((*id).clone(), f, val_rmse))
            })
            .collect()
    });

    let out = a.out.join(a.kind.name());
    reset_output_dir(&out)?;
    config::write(
        &out.join(CONFIG_FILE),
        &ModelConfigFile {
            schema_version: config::SCHEMA_VERSION,
            model: cfg.clone(),
        },
    )?;
    let mut runs = BTreeMap::new();
    for r in trained {
        let (id, f, val_rmse) = r?;
        f.save(&out.join(&id)).map_err(|e| CliError::write(&out.join(&id), e))?;
        runs.insert(id, TurbineRun {
            epochs: f.epochs(),
            val_rmse,
        });
    }
    if let Some(n) = cfg.neural() {
        m.seed("train", n.train.rng_seed);
    }
    m.settings(&serde_json::json!({
        "kind": a.kind,
        "config_hash": cfg.hash(),
        "turbines": runs,
    }));
    m.finish(&out)?;
    Ok(())
}

// ------------------------------------------------------------------ search

pub fn search(a: &SearchArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("search");
    let mut space = match &a.space {
        Some(p) => {
            m.config(p)?;
            config::load::<SearchSpaceFile>(p)?.space
        }
        None => windcorr::models::SearchSpace::default(),
    };
    if let Some(e) = a.max_epochs {
        space.train.max_epochs = e;
        for c in &mut space.candidates {
            apply_train_overrides(c, None, Some(e));
        }
    }
    let prepared = prepared::load(&a.prepared)?;
    m.input_dir(&a.prepared)?;
    let t = prepared.turbine(&a.turbine)?;
    let (tr, va) = (t.part(Partition::Train), t.part(Partition::Validation));
    if va.is_empty() {
        return Err(CliError::data(format!("turbine {} has no validation samples", a.turbine)));
    }
    let outcome = random_search(a.kind, &space, &tr, &va, &t.normalizer, a.n_configs, a.seed);

    reset_output_dir(&a.out)?;
    m.seed("search", a.seed);
    let log_path = a.out.join("trials.csv");
    match outcome {
        Ok(result) => {
            write_trial_log(create_file(&log_path)?, &result.log)?;
            config::write(
                &a.out.join("best_config.json"),
                &ModelConfigFile {
                    schema_version: config::SCHEMA_VERSION,
                    model: result.best.clone(),
                },
            )?;
            let configs: Vec<ModelConfigFile> = result
                .configs
                .iter()
                .map(|c| ModelConfigFile {
                    schema_version: config::SCHEMA_VERSION,
                    model: c.clone(),
                })
                .collect();
            config::write(&a.out.join("configs.json"), &configs)?;
            m.settings(&serde_json::json!({
                "kind": a.kind,
                "turbine": a.turbine,
                "n_configs": a.n_configs,
                "best_trial": result.best_trial,
                "best_val_rmse": result.best_val_rmse,
                "best_config_hash": result.best.hash(),
            }));
            m.finish(&a.out)?;
            Ok(())
        }
        Err(ModelError::Search { message, log }) => {
            write_trial_log(create_file(&log_path)?, &log)?;
            m.note(message.clone());
            m.finish(&a.out)?;
            Err(CliError::new(crate::error::exit::FAILURE, message))
        }
        Err(e) => Err(e.into()),
    }
}

// ---------------------------------------------------------------- evaluate

/// A directory of per-turbine artifacts for one model.
struct ModelDir {
    name: String,
    kind: ModelKind,
    dir: PathBuf,
}

impl ModelDir {
    fn open(dir: &Path) -> Result<Self> {
        let m = verify_outputs(dir)?;
        if m.command != "train" && m.command != "finetune" {
            return Err(CliError::missing(format!("{} does not hold trained models", dir.display())));
        }
        let kind = m
            .settings
            .get("kind")
            .and_then(|k| k.as_str())
            .and_then(|k| k.parse().ok())
            .ok_or_else(|| CliError::integrity(format!("{}: manifest lacks the model kind", dir.display())))?;
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self {
            name,
            kind,
            dir: dir.to_path_buf(),
        })
    }

    fn load(&self, turbine: &str) -> Result<Forecaster> {
        let dir = self.dir.join(turbine);
        if !dir.is_dir() {
            return Err(CliError::missing(format!("no {} model for turbine {turbine} in {}", self.name, self.dir.display())));
        }
        let f = Forecaster::load(&dir).map_err(|e| CliError::from(e).context(&dir.display().to_string()))?;
        if f.kind != self.kind {
            return Err(CliError::integrity(format!("{} holds a {} model", dir.display(), f.kind)));
        }
        Ok(f)
    }

    fn config(&self) -> Result<ModelConfig> {
        load_model_config(&self.dir.join(CONFIG_FILE), self.kind)
    }
}

/// Every model directory directly under `root`, in kind order then by name.
fn scan_models(root: &Path) -> Result<Vec<ModelDir>> {
    if !root.is_dir() {
        return Err(CliError::missing(format!("models directory {} not found", root.display())));
    }
    let mut dirs = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| CliError::read(root, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::read(root, e))?.path();
        if path.is_dir() && path.join(MANIFEST_FILE).exists() {
            dirs.push(ModelDir::open(&path)?);
        }
    }
    dirs.sort_by(|a, b| (a.kind, &a.name).cmp(&(b.kind, &b.name)));
    Ok(dirs)
}

fn truth_of(samples: &[ForecastSample]) -> Vec<Vec<f64>> {
    samples.iter().map(|s| s.targets.clone()).collect()
}

fn per_sample_sq(preds: &[Vec<f64>], truth: &[Vec<f64>]) -> Vec<f64> {
    preds
        .iter()
        .zip(truth)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64)
        .collect()
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("evaluate");
    let prepared = prepared::load(&a.prepared)?;
    m.input_dir(&a.prepared)?;
    let models = scan_models(&a.models)?;
    for md in &models {
        m.input_dir(&md.dir)?;
    }
    let capacity = prepared.site.capacity_kw;
    let tz = prepared.site.context.tz_offset_hours;
    let baseline_name = ModelKind::Baseline.name().to_string();

    let mut results = FarmResults::default();
    let mut obs: BTreeMap<String, Vec<windcorr::eval::Observation>> = BTreeMap::new();
    let mut significance = Vec::new();
    for (id, t) in &prepared.farm.turbines {
        let test = t.part(Partition::Test);
        if test.is_empty() {
            m.note(format!("{id}: no test samples"));
            continue;
        }
        let truth = truth_of(&test);
        let mut forecasts: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
        if !models.iter().any(|md| md.name == baseline_name) {
            let base = Forecaster {
                kind: ModelKind::Baseline,
                artifact: windcorr::models::Artifact::Baseline(prepared.site.curve.clone()),
                normalizer: t.normalizer.clone(),
            };
            forecasts.push((baseline_name.clone(), base.forecast(&test)?));
        }
        for md in &models {
            let f = md.load(id)?;
            if !a.model_normalizer {
                f.check_normalizer(&t.normalizer)
                    .map_err(|e| CliError::from(e).context(&format!("{} {id}", md.name)))?;
            }
            forecasts.push((md.name.clone(), f.forecast(&test)?));
        }
        let base_sq = forecasts
            .iter()
            .find(|(n, _)| *n == baseline_name)
            .map(|(_, p)| per_sample_sq(p, &truth))
            .expect("baseline present");
        for (name, preds) in &forecasts {
            let report = compute_metrics(preds, &truth, capacity)?;
            if *name != baseline_name {
                let sq = per_sample_sq(preds, &truth);
                significance.push((
                    id.clone(),
                    name.clone(),
                    report.rmse,
                    paired_bootstrap_se(&sq, &base_sq, a.bootstrap, a.seed),
                ));
            }
            results.insert(id, name, report);
            obs.entry(name.clone()).or_default().extend(observations(&test, preds));
        }
    }
    if results.turbines.is_empty() {
        return Err(CliError::data("no turbine has test samples"));
    }

    reset_output_dir(&a.out)?;
    write_metrics_csv(create_file(&a.out.join("metrics.csv"))?, &results)?;
    write_error_summary_csv(create_file(&a.out.join("error_summary.csv"))?, &results.error_summary())?;
    write_relative_summary_csv(
        create_file(&a.out.join("relative_summary.csv"))?,
        &results.relative_summary(&baseline_name)?,
    )?;
    write_comparison_csv(create_file(&a.out.join("comparison.csv"))?, &results.comparisons(&baseline_name)?)?;
    write_significance_csv(create_file(&a.out.join("significance.csv"))?, &significance)?;
    for (name, o) in &obs {
        for dim in [BiasDimension::Month, BiasDimension::LocalHour, BiasDimension::TurbineHour] {
            let path = a.out.join(format!("bias_{}_{name}.csv", dim.name()));
            bias_table(o, dim, tz).write_csv(create_file(&path)?)?;
        }
    }
    m.seed("bootstrap", a.seed);
    m.settings(&serde_json::json!({
        "models": models.iter().map(|md| (&md.name, md.kind)).collect::<BTreeMap<_, _>>(),
        "model_normalizer": a.model_normalizer,
        "bootstrap": a.bootstrap,
    }));
    m.finish(&a.out)?;
    Ok(())
}

fn csv_error(e: impl std::fmt::Display) -> CliError {
    CliError::config(format!("cannot write report: {e}"))
}

fn write_metrics_csv<W: Write>(out: W, results: &FarmResults) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["turbine", "model", "k", "mb", "mae", "rmse", "nrmse", "rmse_sample_std"])
        .map_err(csv_error)?;
    for (turbine, models) in &results.turbines {
        for (model, r) in models {
            w.write_record([
                turbine.clone(),
                model.clone(),
                r.k.to_string(),
                fmt(r.mb),
                fmt(r.mae),
                fmt(r.rmse),
                fmt(r.nrmse),
                fmt(r.rmse_sample_std),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush().map_err(csv_error)
}

fn write_significance_csv<W: Write>(out: W, rows: &[(String, String, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["turbine", "model", "rmse", "mse_diff_se_vs_baseline"]).map_err(csv_error)?;
    for (turbine, model, rmse, se) in rows {
        w.write_record([turbine.clone(), model.clone(), fmt(*rmse), fmt(*se)]).map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

// ---------------------------------------------------------------- finetune

fn finetune_config(
    m: &mut ManifestBuilder,
    path: Option<&Path>,
    lr_scale: Option<f64>,
    max_epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<(FinetuneConfig, bool)> {
    let (mut cfg, from_file) = match path {
        Some(p) => {
            m.config(p)?;
            (config::load::<FinetuneConfigFile>(p)?.finetune, true)
        }
        None => (FinetuneConfig::default(), false),
    };
    let defaulted_layers = cfg.frozen_layers.is_none();
    let defaulted_lr = !from_file && lr_scale.is_none();
    if let Some(s) = lr_scale {
        cfg.lr_scale = s;
    }
    if let Some(e) = max_epochs {
        cfg.max_epochs = e;
    }
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    m.seed("finetune", cfg.rng_seed);
    Ok((cfg, defaulted_layers || defaulted_lr))
}

const DEFAULTS_NOTE: &str =
    "frozen layers and/or lr_scale are the shipped defaults (engineering choices, not tuned values)";

pub fn finetune_cmd(a: &FinetuneArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("finetune");
    let (cfg, defaulted) = finetune_config(&mut m, a.config.as_deref(), a.lr_scale, a.max_epochs, a.seed)?;
    let original = ModelDir::open(&a.model)?;
    if !original.kind.is_neural() {
        return Err(CliError::config(format!("fine-tuning applies to neural models, not {}", original.kind)));
    }
    m.input_dir(&a.model)?;
    let prepared = prepared::load(&a.prepared)?;
    m.input_dir(&a.prepared)?;
    let turbines = select_turbines(&prepared, &a.turbines)?;
    let originals: Vec<Forecaster> = turbines.iter().map(|(id, _)| original.load(id)).collect::<Result<_>>()?;

    let pool = thread_pool(a.parallel)?;
    let tuned: Vec<Result<Forecaster>> = pool.install(|| {
        turbines
            .par_iter()
            .zip(&originals)
            .map(|((id, t), f)| {
                let (tr, va) = (t.part(Partition::Train), t.part(Partition::Validation));
                finetune(f, &tr, &va, &cfg).map_err(|e| CliError::from(e).context(id))
            })
            .collect()
    });

    let out = a.out.join(original.kind.name());
    reset_output_dir(&out)?;
    if original.dir.join(CONFIG_FILE).exists() {
        config::write(
            &out.join(CONFIG_FILE),
            &ModelConfigFile {
                schema_version: config::SCHEMA_VERSION,
                model: original.config()?,
            },
        )?;
    }
    let mut frozen = Vec::new();
    for ((id, _), f) in turbines.iter().zip(tuned) {
        let f = f?;
        if frozen.is_empty() {
            frozen = cfg.frozen_for(&f.neural_model().expect("neural").spec);
        }
        f.save(&out.join(id.as_str())).map_err(|e| CliError::write(&out.join(id.as_str()), e))?;
    }
    if defaulted {
        m.note(DEFAULTS_NOTE);
    }
    m.settings(&serde_json::json!({
        "kind": original.kind,
        "finetune": cfg,
        "frozen_layers": frozen,
    }));
    m.finish(&out)?;
    Ok(())
}

// ------------------------------------------------------ compare-strategies

pub fn compare_strategies(a: &CompareArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("compare-strategies");
    let (cfg, defaulted) = finetune_config(&mut m, a.config.as_deref(), a.lr_scale, a.max_epochs, a.seed)?;
    let prepared = prepared::load(&a.prepared)?;
    m.input_dir(&a.prepared)?;
    let turbines = select_turbines(&prepared, &a.turbines)?;
    let mut jobs = Vec::new();
    for &kind in &a.kinds {
        if !kind.is_neural() {
            return Err(CliError::config(format!("update strategies apply to neural models, not {kind}")));
        }
        let md = ModelDir::open(&a.models.join(kind.name()))?;
        m.input_dir(&md.dir)?;
        let mut retrain = md.config()?;
        apply_train_overrides(&mut retrain, a.seed, a.max_epochs);
        for (id, t) in &turbines {
            jobs.push((kind, (*id).clone(), *t, md.load(id)?, retrain.clone()));
        }
    }

    let curve = &prepared.site.curve;
    let pool = thread_pool(a.parallel)?;
    let reports: Vec<Result<StrategyReport>> = pool.install(|| {
        jobs.par_iter()
            .map(|(kind, id, t, original, retrain)| {
                let (tr, va, te) = (t.part(Partition::Train), t.part(Partition::Validation), t.part(Partition::Test));
                log::info!("comparing strategies for {kind} {id}");
                let new = NewData {
                    train: &tr,
                    val: &va,
                    test: &te,
                };
                run_strategies(original, retrain, new, &cfg, curve).map_err(|e| CliError::from(e).context(id))
            })
            .collect()
    });

    reset_output_dir(&a.out)?;
    let mut rows = Vec::new();
    let mut frozen = BTreeMap::new();
    for ((kind, id, ..), r) in jobs.iter().zip(reports) {
        let r = r?;
        frozen.insert(kind.name(), r.frozen_layers.clone());
        rows.push((id.clone(), r));
    }
    let lines = strategy_lines(&rows);
    write_strategies_csv(create_file(&a.out.join("strategies.csv"))?, &lines)?;
    let path = a.out.join("strategies.json");
    let json = serde_json::to_string_pretty(&lines).expect("strategies serialize");
    fs::write(&path, json + "\n").map_err(|e| CliError::write(&path, e))?;
    if defaulted {
        m.note(DEFAULTS_NOTE);
    }
    m.settings(&serde_json::json!({
        "kinds": a.kinds,
        "finetune": cfg,
        "frozen_layers": frozen,
    }));
    m.finish(&a.out)?;
    Ok(())
}

/// One strategies table row; the baseline appears once per turbine and kind.
#[derive(Debug, Serialize)]
struct StrategyLine {
    turbine: String,
    kind: ModelKind,
    strategy: &'static str,
    k: usize,
    mb: f64,
    mae: f64,
    rmse: f64,
    nrmse: f64,
}

fn strategy_lines(rows: &[(String, StrategyReport)]) -> Vec<StrategyLine> {
    let mut out = Vec::new();
    for (turbine, rep) in rows {
        let kind = rep.rows.first().map(|r| r.kind).unwrap_or(ModelKind::Baseline);
        let all = std::iter::once((kind, "baseline", &rep.baseline))
            .chain(rep.rows.iter().map(|r| (r.kind, r.strategy.name(), &r.report)));
        for (kind, strategy, r) in all {
            out.push(StrategyLine {
                turbine: turbine.clone(),
                kind,
                strategy,
                k: r.k,
                mb: r.mb,
                mae: r.mae,
                rmse: r.rmse,
                nrmse: r.nrmse,
            });
        }
    }
    out
}

fn write_strategies_csv<W: Write>(out: W, lines: &[StrategyLine]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["turbine", "kind", "strategy", "k", "mb", "mae", "rmse", "nrmse"])
        .map_err(csv_error)?;
    for l in lines {
        w.write_record([
            l.turbine.clone(),
            l.kind.to_string(),
            l.strategy.to_string(),
            l.k.to_string(),
            fmt(l.mb),
            fmt(l.mae),
            fmt(l.rmse),
            fmt(l.nrmse),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}
