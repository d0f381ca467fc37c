//! The five forecasters behind one interface, their training and random
//! hyperparameter search.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::curve::PowerCurve;
use crate::eval::{compute_metrics, EvalError};
use crate::gbdt::{fit_gb, predict_gb, GbConfig, GbEnsemble, GbError};
use crate::ingest::{FeatureVector, Normalizer};
use crate::nnet::{
    self, cnn_spec, cnn_spec_with, lstm_spec, lstm_spec_with, nn_spec, nn_spec_with, Dataset, ModelManifest,
    ModelSpec, NnError, TrainConfig, TrainedModel,
};
use crate::sampler::ForecastSample;
use crate::{HORIZON, N_FEATURES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("search failed: {message}")]
    Search { message: String, log: Vec<TrialRecord> },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Gb(#[from] GbError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Baseline,
    Gb,
    Nn,
    Cnn,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Baseline, ModelKind::Gb, ModelKind::Nn, ModelKind::Cnn, ModelKind::Lstm];
    pub const NEURAL: [ModelKind; 3] = [ModelKind::Nn, ModelKind::Cnn, ModelKind::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Gb => "gb",
            ModelKind::Nn => "nn",
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, ModelKind::Nn | ModelKind::Cnn | ModelKind::Lstm)
    }

    /// Kinds that see one timestep at a time.
    pub fn is_rowwise(self) -> bool {
        matches!(self, ModelKind::Gb | ModelKind::Nn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ModelError::Input(format!("unknown model kind {s:?} (baseline|gb|nn|cnn|lstm)")))
    }
}

/// Everything needed to train one model of a kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Baseline,
    Gb(GbConfig),
    Nn(NeuralConfig),
    Cnn(NeuralConfig),
    Lstm(NeuralConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub spec: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ModelConfig {
    /// The shipped per-kind defaults.
    pub fn default_for(kind: ModelKind) -> Self {
        let neural = |spec| NeuralConfig {
            spec,
            train: TrainConfig::default(),
        };
        match kind {
            ModelKind::Baseline => ModelConfig::Baseline,
            ModelKind::Gb => ModelConfig::Gb(GbConfig::default()),
            ModelKind::Nn => ModelConfig::Nn(neural(nn_spec())),
            ModelKind::Cnn => ModelConfig::Cnn(neural(cnn_spec())),
            ModelKind::Lstm => ModelConfig::Lstm(neural(lstm_spec())),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Baseline => ModelKind::Baseline,
            ModelConfig::Gb(_) => ModelKind::Gb,
            ModelConfig::Nn(_) => ModelKind::Nn,
            ModelConfig::Cnn(_) => ModelKind::Cnn,
            ModelConfig::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub fn neural(&self) -> Option<&NeuralConfig> {
        match self {
            ModelConfig::Nn(c) | ModelConfig::Cnn(c) | ModelConfig::Lstm(c) => Some(c),
            _ => None,
        }
    }

    pub fn neural_mut(&mut self) -> Option<&mut NeuralConfig> {
        match self {
            ModelConfig::Nn(c) | ModelConfig::Cnn(c) | ModelConfig::Lstm(c) => Some(c),
            _ => None,
        }
    }

    /// Short content hash identifying the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Baseline(PowerCurve),
    Gb(GbEnsemble),
    Neural(TrainedModel),
}

/// A trained model of any kind with the normalizer its inputs were scaled by.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub kind: ModelKind,
    pub artifact: Artifact,
    pub normalizer: Normalizer,
}

/// Maps the hub-height NWP wind of every step through the power curve.
pub fn baseline_forecast(sample: &ForecastSample, curve: &PowerCurve) -> Vec<f64> {
    sample.hub_wind().map(|ws| curve.power_unchecked(ws)).collect()
}

/// Normalized single-timestep rows: `K*49 x 10` inputs, `K*49 x 1` targets.
pub fn row_dataset(samples: &[ForecastSample], norm: &Normalizer) -> Dataset {
    let n = samples.len() * HORIZON;
    let mut x = Vec::with_capacity(n * N_FEATURES);
    let mut y = Vec::with_capacity(n);
    for s in samples {
        x.extend(s.feature_matrix());
        y.extend(s.targets.iter().map(|&p| norm.normalize_power(p)));
    }
    norm.apply_rows(&mut x);
    Dataset::new(
        Array2::from_shape_vec((n, N_FEATURES), x).expect("row shape"),
        Array2::from_shape_vec((n, 1), y).expect("target shape"),
    )
    .expect("aligned")
}

/// Normalized whole samples: `K x 490` time-major inputs, `K x 49` targets.
pub fn sequence_dataset(samples: &[ForecastSample], norm: &Normalizer) -> Dataset {
    let k = samples.len();
    let mut x = Vec::with_capacity(k * HORIZON * N_FEATURES);
    let mut y = Vec::with_capacity(k * HORIZON);
    for s in samples {
        x.extend(s.feature_matrix());
        y.extend(s.targets.iter().map(|&p| norm.normalize_power(p)));
    }
    norm.apply_rows(&mut x);
    Dataset::new(
        Array2::from_shape_vec((k, HORIZON * N_FEATURES), x).expect("sequence shape"),
        Array2::from_shape_vec((k, HORIZON), y).expect("target shape"),
    )
    .expect("aligned")
}

pub fn dataset_for(kind: ModelKind, samples: &[ForecastSample], norm: &Normalizer) -> Dataset {
    if kind.is_rowwise() {
        row_dataset(samples, norm)
    } else {
        sequence_dataset(samples, norm)
    }
}

/// Fits a normalizer on the raw feature rows of the training samples.
pub fn fit_normalizer(train: &[ForecastSample], capacity_kw: f64) -> Result<Normalizer, ModelError> {
    Normalizer::fit(train.iter().flat_map(|s| s.features.iter().map(FeatureVector::as_slice)), capacity_kw)
        .map_err(|e| ModelError::Input(e.to_string()))
}

fn check_samples(samples: &[ForecastSample]) -> Result<(), ModelError> {
    for s in samples {
        if s.features.len() != HORIZON || s.targets.len() != HORIZON {
            return Err(ModelError::Input(format!(
                "sample {} {} has {} steps, expected {HORIZON}",
                s.turbine_id,
                s.t0,
                s.features.len()
            )));
        }
    }
    Ok(())
}

/// Trains one model. The baseline involves no training; GB ignores `val`.
pub fn train_forecaster(
    config: &ModelConfig,
    train: &[ForecastSample],
    val: &[ForecastSample],
    norm: &Normalizer,
    curve: &PowerCurve,
) -> Result<Forecaster, ModelError> {
    check_samples(train)?;
    check_samples(val)?;
    let kind = config.kind();
    let artifact = match config {
        ModelConfig::Baseline => Artifact::Baseline(curve.clone()),
        ModelConfig::Gb(cfg) => {
            let d = row_dataset(train, norm);
            let targets: Vec<f64> = d.y.iter().copied().collect();
            Artifact::Gb(fit_gb(d.x.view(), &targets, cfg)?.0)
        }
        ModelConfig::Nn(c) | ModelConfig::Cnn(c) | ModelConfig::Lstm(c) => {
            let tr = dataset_for(kind, train, norm);
            let va = dataset_for(kind, val, norm);
            Artifact::Neural(nnet::train(&c.spec, &tr, &va, &c.train)?)
        }
    };
    Ok(Forecaster {
        kind,
        artifact,
        normalizer: norm.clone(),
    })
}

impl Forecaster {
    /// Fails unless `data_normalizer` is the one this model was trained with.
    pub fn check_normalizer(&self, data_normalizer: &Normalizer) -> Result<(), ModelError> {
        if self.kind == ModelKind::Baseline {
            return Ok(());
        }
        let (a, b) = (self.normalizer.hash(), data_normalizer.hash());
        if a != b {
            return Err(ModelError::Integrity(format!(
                "{} model was trained with normalizer {a}, data prepared with {b}",
                self.kind
            )));
        }
        Ok(())
    }

    /// 49 power values in kW per sample, clamped to `[0, capacity]`.
    pub fn forecast(&self, samples: &[ForecastSample]) -> Result<Vec<Vec<f64>>, ModelError> {
        check_samples(samples)?;
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let norm = &self.normalizer;
        let raw: Vec<f64> = match &self.artifact {
            Artifact::Baseline(curve) => return Ok(samples.iter().map(|s| baseline_forecast(s, curve)).collect()),
            Artifact::Gb(ens) => predict_gb(ens, row_dataset(samples, norm).x.view())?,
            Artifact::Neural(model) => {
                let d = dataset_for(self.kind, samples, norm);
                model.predict_batched(d.x.view(), 256)?.iter().copied().collect()
            }
        };
        Ok(raw
            .chunks(HORIZON)
            .map(|c| c.iter().map(|&y| norm.denormalize_power(y)).collect())
            .collect())
    }

    pub fn neural_model(&self) -> Option<&TrainedModel> {
        match &self.artifact {
            Artifact::Neural(m) => Some(m),
            _ => None,
        }
    }

    /// Training epochs run, 0 for kinds without epochs.
    pub fn epochs(&self) -> usize {
        self.neural_model().map_or(0, |m| m.history.len())
    }
}

/// On-disk description of a forecaster; neural weights live beside it.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ForecasterFile {
    kind: ModelKind,
    normalizer: Normalizer,
    #[serde(skip_serializing_if = "Option::is_none")]
    curve: Option<PowerCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gb: Option<GbEnsemble>,
    #[serde(skip_serializing_if = "Option::is_none")]
    network: Option<ModelManifest>,
}

pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

impl Forecaster {
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir)?;
        let mut file = ForecasterFile {
            kind: self.kind,
            normalizer: self.normalizer.clone(),
            curve: None,
            gb: None,
            network: None,
        };
        match &self.artifact {
            Artifact::Baseline(c) => file.curve = Some(c.clone()),
            Artifact::Gb(e) => file.gb = Some(e.clone()),
            Artifact::Neural(m) => {
                let (manifest, blob) = m.to_parts();
                fs::write(dir.join(WEIGHTS_FILE), blob)?;
                file.network = Some(manifest);
            }
        }
        let json = serde_json::to_string_pretty(&file).expect("forecaster serializes");
        fs::write(dir.join(MODEL_FILE), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(dir.join(MODEL_FILE))?;
        let file: ForecasterFile =
            serde_json::from_str(&text).map_err(|e| ModelError::Artifact(format!("{}: {e}", dir.display())))?;
        let missing = |what: &str| ModelError::Artifact(format!("{} model file lacks {what}", file.kind));
        let artifact = match file.kind {
            ModelKind::Baseline => Artifact::Baseline(file.curve.clone().ok_or_else(|| missing("curve"))?),
            ModelKind::Gb => Artifact::Gb(file.gb.clone().ok_or_else(|| missing("trees"))?),
            _ => {
                let manifest = file.network.as_ref().ok_or_else(|| missing("network"))?;
                let blob = fs::read(dir.join(WEIGHTS_FILE))?;
                Artifact::Neural(TrainedModel::from_parts(manifest, &blob).map_err(|e| match e {
                    NnError::Format(m) => ModelError::Integrity(m),
                    other => ModelError::Nn(other),
                })?)
            }
        };
        Ok(Forecaster {
            kind: file.kind,
            artifact,
            normalizer: file.normalizer,
        })
    }
}

/// Inclusive range sampled uniformly, or log-uniformly when `log` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub log: bool,
}

impl Range {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.min >= self.max {
            return self.min;
        }
        if self.log {
            rng.random_range(self.min.ln()..=self.max.ln()).exp()
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

fn pick<T: Copy>(choices: &[T], rng: &mut ChaCha8Rng) -> T {
    choices[rng.random_range(0..choices.len())]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralRanges {
    pub units: Vec<usize>,
    pub lstm_units: Vec<usize>,
    pub filters: Vec<usize>,
    pub kernel_widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub dropout: Vec<f64>,
    pub learning_rate: Range,
}

impl Default for NeuralRanges {
    fn default() -> Self {
        Self {
            units: vec![16, 32, 64, 128],
            lstm_units: vec![32, 64, 96, 128],
            filters: vec![16, 32, 40, 64],
            kernel_widths: vec![3, 5],
            strides: vec![1, 2],
            dropout: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            learning_rate: Range {
                min: 1e-4,
                max: 1e-2,
                log: true,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbRanges {
    pub n_stages: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub learning_rate: Range,
}

impl Default for GbRanges {
    fn default() -> Self {
        Self {
            n_stages: vec![50, 100, 200, 300],
            max_depth: vec![2, 3, 4, 5, 6, 8],
            learning_rate: Range {
                min: 0.01,
                max: 0.3,
                log: true,
            },
        }
    }
}

/// Hyperparameter ranges, or an explicit list of candidates drawn from
/// instead when non-empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub neural: NeuralRanges,
    pub gb: GbRanges,
    /// Training settings shared by every neural candidate.
    pub train: TrainConfig,
    pub candidates: Vec<ModelConfig>,
}

impl SearchSpace {
    pub fn validate(&self, kind: ModelKind) -> Result<(), ModelError> {
        let empty = |what: &str| ModelError::Input(format!("search space has no {what} choices"));
        if !self.candidates.is_empty() {
            if let Some(c) = self.candidates.iter().find(|c| c.kind() != kind) {
                return Err(ModelError::Input(format!("{} candidate in a {kind} search", c.kind())));
            }
            return Ok(());
        }
        let n = &self.neural;
        match kind {
            ModelKind::Baseline => return Err(ModelError::Unsupported("the baseline has no hyperparameters".into())),
            ModelKind::Gb if self.gb.n_stages.is_empty() => return Err(empty("n_stages")),
            ModelKind::Gb if self.gb.max_depth.is_empty() => return Err(empty("max_depth")),
            ModelKind::Nn | ModelKind::Cnn | ModelKind::Lstm if n.units.is_empty() => return Err(empty("units")),
            ModelKind::Nn | ModelKind::Cnn | ModelKind::Lstm if n.dropout.is_empty() => return Err(empty("dropout")),
            ModelKind::Cnn if n.filters.is_empty() || n.kernel_widths.is_empty() || n.strides.is_empty() => {
                return Err(empty("convolution"))
            }
            ModelKind::Lstm if n.lstm_units.is_empty() => return Err(empty("lstm_units")),
            _ => {}
        }
        Ok(())
    }

    /// Draws one configuration.
    pub fn sample(&self, kind: ModelKind, rng: &mut ChaCha8Rng) -> ModelConfig {
        if !self.candidates.is_empty() {
            return self.candidates[rng.random_range(0..self.candidates.len())].clone();
        }
        let n = &self.neural;
        let neural = |spec| NeuralConfig {
            spec,
            train: self.train.clone(),
        };
        match kind {
            ModelKind::Baseline => ModelConfig::Baseline,
            ModelKind::Gb => ModelConfig::Gb(GbConfig {
                n_stages: pick(&self.gb.n_stages, rng),
                max_depth: pick(&self.gb.max_depth, rng),
                learning_rate: self.gb.learning_rate.sample(rng),
                ..GbConfig::default()
            }),
            ModelKind::Nn => {
                let (u1, u2, d) = (pick(&n.units, rng), pick(&n.units, rng), pick(&n.dropout, rng));
                ModelConfig::Nn(neural(nn_spec_with(u1, u2, d, n.learning_rate.sample(rng))))
            }
            ModelKind::Cnn => {
                let (f1, f2) = (pick(&n.filters, rng), pick(&n.filters, rng));
                let (w, s) = (pick(&n.kernel_widths, rng), pick(&n.strides, rng));
                let (u, d) = (pick(&n.units, rng), pick(&n.dropout, rng));
                ModelConfig::Cnn(neural(cnn_spec_with(f1, f2, w, s, u, d, n.learning_rate.sample(rng))))
            }
            ModelKind::Lstm => {
                let h = pick(&n.lstm_units, rng);
                let (u1, u2, d) = (pick(&n.units, rng), pick(&n.units, rng), pick(&n.dropout, rng));
                ModelConfig::Lstm(neural(lstm_spec_with(h, u1, u2, d, n.learning_rate.sample(rng))))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config_hash: String,
    /// Per-sample validation RMSE in kW; absent when training diverged.
    pub val_rmse: Option<f64>,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: ModelConfig,
    pub best_trial: usize,
    pub best_val_rmse: f64,
    pub configs: Vec<ModelConfig>,
    pub log: Vec<TrialRecord>,
}

/// Validation per-sample RMSE of a trained forecaster, in kW.
pub fn validation_rmse(f: &Forecaster, val: &[ForecastSample]) -> Result<f64, ModelError> {
    let preds = f.forecast(val)?;
    let truth: Vec<Vec<f64>> = val.iter().map(|s| s.targets.clone()).collect();
    Ok(compute_metrics(&preds, &truth, f.normalizer.capacity_kw)?.rmse)
}

/// Trains `n_configs` sampled configurations and keeps the one with the
/// lowest validation RMSE, the earliest trial winning ties.
pub fn random_search(
    kind: ModelKind,
    space: &SearchSpace,
    train: &[ForecastSample],
    val: &[ForecastSample],
    norm: &Normalizer,
    n_configs: usize,
    seed: u64,
) -> Result<SearchResult, ModelError> {
    space.validate(kind)?;
    if n_configs == 0 {
        return Err(ModelError::Input("n_configs must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<ModelConfig> = (0..n_configs)
        .map(|i| {
            let mut c = space.sample(kind, &mut rng);
            if let Some(n) = c.neural_mut() {
                n.train.rng_seed = seed.wrapping_add(i as u64);
            }
            c
        })
        .collect();
    let curve = PowerCurve::default();
    let mut log = Vec::with_capacity(n_configs);
    let mut best: Option<(usize, f64)> = None;
    for (trial, config) in configs.iter().enumerate() {
        let outcome = train_forecaster(config, train, val, norm, &curve);
        let (val_rmse, epochs) = match outcome {
            Ok(f) => (Some(validation_rmse(&f, val)?), f.epochs()),
            Err(ModelError::Nn(NnError::Diverged { epoch })) => (None, epoch),
            Err(e) => return Err(e),
        };
        log::debug!("trial {trial} {} val_rmse {:?}", config.hash(), val_rmse);
        if let Some(r) = val_rmse {
            if best.is_none_or(|(_, b)| r < b) {
                best = Some((trial, r));
            }
        }
        log.push(TrialRecord {
            trial,
            config_hash: config.hash(),
            val_rmse,
            epochs,
        });
    }
    match best {
        Some((t, r)) => Ok(SearchResult {
            best: configs[t].clone(),
            best_trial: t,
            best_val_rmse: r,
            configs,
            log,
        }),
        None => Err(ModelError::Search {
            message: format!("all {n_configs} {kind} trials diverged"),
            log,
        }),
    }
}

pub fn write_trial_log<W: std::io::Write>(out: W, log: &[TrialRecord]) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| ModelError::Artifact(e.to_string());
    w.write_record(["trial", "config_hash", "val_rmse", "epochs"]).map_err(csv_err)?;
    for t in log {
        w.write_record([
            t.trial.to_string(),
            t.config_hash.clone(),
            t.val_rmse.map(crate::eval::fmt).unwrap_or_default(),
            t.epochs.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
