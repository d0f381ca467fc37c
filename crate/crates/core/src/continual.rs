//! Model update strategies for newly arrived data: keep the original model,
//! retrain from scratch, or fine-tune the last layers of the original.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::PowerCurve;
use crate::eval::{compute_metrics, fmt, EvalError, MetricsReport};
use crate::models::{
    baseline_forecast, dataset_for, fit_normalizer, train_forecaster, Artifact, Forecaster, ModelConfig, ModelError,
    ModelKind,
};
use crate::nnet::{fit, LayerSpec, ModelSpec, NnError, TrainConfig, TrainedModel};
use crate::sampler::ForecastSample;

#[derive(Debug, Error)]
pub enum ContinualError {
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    /// Layer indices kept fixed; `None` freezes everything before the last
    /// hidden dense block.
    pub frozen_layers: Option<Vec<usize>>,
    pub lr_scale: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            frozen_layers: None,
            lr_scale: 0.1,
            max_epochs: 500,
            patience: 15,
            batch_size: 64,
            rng_seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self, spec: &ModelSpec) -> Result<(), ContinualError> {
        if !(self.lr_scale > 0.0 && self.lr_scale <= 1.0) {
            return Err(ContinualError::Input(format!("lr_scale {} not in (0, 1]", self.lr_scale)));
        }
        if let Some(layers) = &self.frozen_layers {
            if let Some(i) = layers.iter().find(|&&i| i >= spec.layers.len()) {
                return Err(ContinualError::Input(format!(
                    "frozen layer {i} out of range ({} layers)",
                    spec.layers.len()
                )));
            }
        }
        Ok(())
    }

    /// The frozen set this config resolves to for `spec`.
    pub fn frozen_for(&self, spec: &ModelSpec) -> Vec<usize> {
        match &self.frozen_layers {
            Some(l) => {
                let mut l = l.clone();
                l.sort_unstable();
                l.dedup();
                l
            }
            None => default_frozen_layers(spec),
        }
    }
}

/// Every layer before the second-to-last dense layer, leaving the last
/// hidden block and the output layer trainable.
pub fn default_frozen_layers(spec: &ModelSpec) -> Vec<usize> {
    let dense: Vec<usize> = spec
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Dense { .. }))
        .map(|(i, _)| i)
        .collect();
    let first_trainable = if dense.len() >= 2 { dense[dense.len() - 2] } else { dense.last().copied().unwrap_or(0) };
    (0..first_trainable).collect()
}

/// Continues training a copy of `model` on new data at a reduced learning
/// rate with the configured layers frozen.
pub fn finetune_model(
    model: &TrainedModel,
    train: &crate::nnet::Dataset,
    val: &crate::nnet::Dataset,
    cfg: &FinetuneConfig,
) -> Result<TrainedModel, ContinualError> {
    cfg.validate(&model.spec)?;
    if train.is_empty() || val.is_empty() {
        return Err(ContinualError::Input("new training and validation data must be non-empty".into()));
    }
    let mut out = model.clone();
    let frozen = cfg.frozen_for(&model.spec);
    out.frozen = (0..model.spec.layers.len()).map(|i| frozen.contains(&i)).collect();
    if !out.trainable_mask().iter().any(|&t| t) {
        return Ok(out);
    }
    let tc = TrainConfig {
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        early_stopping_patience: cfg.patience,
        restore_best: true,
        learning_rate: None,
        rng_seed: cfg.rng_seed,
    };
    let lr = model.spec.optimizer.learning_rate * cfg.lr_scale;
    fit(&mut out, train, val, &tc, lr)?;
    Ok(out)
}

/// Fine-tunes a neural forecaster on new samples, keeping its normalizer.
pub fn finetune(
    original: &Forecaster,
    new_train: &[ForecastSample],
    new_val: &[ForecastSample],
    cfg: &FinetuneConfig,
) -> Result<Forecaster, ContinualError> {
    let Artifact::Neural(model) = &original.artifact else {
        return Err(ContinualError::Unsupported(format!(
            "fine-tuning applies to neural models, not {}",
            original.kind
        )));
    };
    if new_train.is_empty() || new_val.is_empty() {
        return Err(ContinualError::Input("new training and validation data must be non-empty".into()));
    }
    let norm = &original.normalizer;
    let tr = dataset_for(original.kind, new_train, norm);
    let va = dataset_for(original.kind, new_val, norm);
    Ok(Forecaster {
        kind: original.kind,
        artifact: Artifact::Neural(finetune_model(model, &tr, &va, cfg)?),
        normalizer: norm.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Original,
    Retrain,
    Continual,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Original => "original",
            Strategy::Retrain => "retrain",
            Strategy::Continual => "continual",
        }
    }
}

/// Samples of the newly arrived period.
#[derive(Debug, Clone, Copy)]
pub struct NewData<'a> {
    pub train: &'a [ForecastSample],
    pub val: &'a [ForecastSample],
    pub test: &'a [ForecastSample],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: Strategy,
    pub kind: ModelKind,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub rows: Vec<StrategyRow>,
    /// The power curve, independent of any training data.
    pub baseline: MetricsReport,
    pub frozen_layers: Vec<usize>,
    pub lr_scale: f64,
}

impl StrategyReport {
    pub fn rmse(&self, strategy: Strategy) -> Option<f64> {
        self.rows.iter().find(|r| r.strategy == strategy).map(|r| r.report.rmse)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["strategy", "model", "k", "mb", "mae", "rmse", "nrmse"])?;
        let base = ("baseline", ModelKind::Baseline, &self.baseline);
        let rows = self.rows.iter().map(|r| (r.strategy.name(), r.kind, &r.report));
        for (strategy, kind, rep) in std::iter::once(base).chain(rows) {
            w.write_record([
                strategy.to_string(),
                kind.to_string(),
                rep.k.to_string(),
                fmt(rep.mb),
                fmt(rep.mae),
                fmt(rep.rmse),
                fmt(rep.nrmse),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn metrics_on(f: &Forecaster, test: &[ForecastSample]) -> Result<MetricsReport, ContinualError> {
    let preds = f.forecast(test)?;
    let truth: Vec<Vec<f64>> = test.iter().map(|s| s.targets.clone()).collect();
    Ok(compute_metrics(&preds, &truth, f.normalizer.capacity_kw)?)
}

/// Evaluates the three strategies on the same new test samples.
///
/// The original model only ever sees the test set. Retraining fits a fresh
/// normalizer on the new training data; fine-tuning keeps the original one.
pub fn run_strategies(
    original: &Forecaster,
    retrain_config: &ModelConfig,
    new: NewData<'_>,
    cfg: &FinetuneConfig,
    curve: &PowerCurve,
) -> Result<StrategyReport, ContinualError> {
    let Some(model) = original.neural_model() else {
        return Err(ContinualError::Unsupported(format!(
            "update strategies apply to neural models, not {}",
            original.kind
        )));
    };
    if retrain_config.kind() != original.kind {
        return Err(ContinualError::Input(format!(
            "retrain config is {} but the original model is {}",
            retrain_config.kind(),
            original.kind
        )));
    }
    if new.test.is_empty() {
        return Err(ContinualError::Input("new test data is empty".into()));
    }
    let capacity = original.normalizer.capacity_kw;
    let truth: Vec<Vec<f64>> = new.test.iter().map(|s| s.targets.clone()).collect();
    let base_preds: Vec<Vec<f64>> = new.test.iter().map(|s| baseline_forecast(s, curve)).collect();
    let baseline = compute_metrics(&base_preds, &truth, capacity)?;

    let original_report = metrics_on(original, new.test)?;

    let fresh_norm = fit_normalizer(new.train, capacity)?;
    let retrained = train_forecaster(retrain_config, new.train, new.val, &fresh_norm, curve)?;
    let retrain_report = metrics_on(&retrained, new.test)?;

    let tuned = finetune(original, new.train, new.val, cfg)?;
    let continual_report = metrics_on(&tuned, new.test)?;

    Ok(StrategyReport {
        rows: vec![
            StrategyRow {
                strategy: Strategy::Original,
                kind: original.kind,
                report: original_report,
            },
            StrategyRow {
                strategy: Strategy::Retrain,
                kind: original.kind,
                report: retrain_report,
            },
            StrategyRow {
                strategy: Strategy::Continual,
                kind: original.kind,
                report: continual_report,
            },
        ],
        baseline,
        frozen_layers: cfg.frozen_for(&model.spec),
        lr_scale: cfg.lr_scale,
    })
}
