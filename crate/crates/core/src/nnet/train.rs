use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::model::{EpochRecord, Mode, TrainedModel};
use super::spec::ModelSpec;
use super::NnError;

/// Inputs and targets, one example per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self, NnError> {
        if x.nrows() != y.nrows() {
            return Err(NnError::Input(format!(
                "{} inputs but {} targets",
                x.nrows(),
                y.nrows()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stopping_patience: usize,
    pub restore_best: bool,
    /// Overrides the learning rate of the model spec when set.
    pub learning_rate: Option<f64>,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 500,
            early_stopping_patience: 15,
            restore_best: true,
            learning_rate: None,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.early_stopping_patience < 1 {
            return Err(NnError::Spec("patience must be at least 1".into()));
        }
        if self.batch_size < 1 || self.max_epochs < 1 {
            return Err(NnError::Spec("batch size and max epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Trains a fresh network of `spec` on `train`, early-stopping on `val`.
pub fn train(spec: &ModelSpec, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel, NnError> {
    let mut model = TrainedModel::init(spec, cfg.rng_seed)?;
    let lr = cfg.learning_rate.unwrap_or(spec.optimizer.learning_rate);
    fit(&mut model, train, val, cfg, lr)?;
    Ok(model)
}

/// Continues training `model` in place at learning rate `lr`; frozen layers
/// are not updated. History is replaced by this run's epochs.
pub fn fit(
    model: &mut TrainedModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(), NnError> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(NnError::Input("training and validation sets must be non-empty".into()));
    }
    for d in [train, val] {
        if d.x.ncols() != model.input_size() || d.y.ncols() != model.output_size() {
            return Err(NnError::Input(format!(
                "dataset has {} inputs / {} targets, model expects {} / {}",
                d.x.ncols(),
                d.y.ncols(),
                model.input_size(),
                model.output_size()
            )));
        }
    }
    let mask = model.trainable_mask();
    let any_trainable = mask.iter().any(|&m| m);
    let adam_cfg = model.spec.optimizer;
    let mut adam = AdamState::new(model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5eed_0f_ba7c);
    let mut stopper = EarlyStopping::new(cfg.early_stopping_patience);
    let mut best = (model.params.clone(), model.state.clone(), model.bn_updates);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut start = 0;
        while start < order.len() {
            let mut end = (start + cfg.batch_size).min(order.len());
            // fold a trailing single example into the previous batch; batch
            // statistics of one row are degenerate
            if order.len() - end == 1 {
                end = order.len();
            }
            let idx = &order[start..end];
            let xb = train.x.select(Axis(0), idx);
            let yb = train.y.select(Axis(0), idx);
            if any_trainable {
                let (loss, grad, updates) = model.loss_and_gradient(xb.view(), yb.view(), Mode::Train, &mut rng)?;
                if !loss.is_finite() {
                    return Err(NnError::Diverged { epoch });
                }
                total += loss * idx.len() as f64;
                model.commit_state(updates);
                adam_step(&mut adam, &mut model.params, &grad, &adam_cfg, lr, Some(&mask));
            } else {
                total += model.mse(xb.view(), yb.view())? * idx.len() as f64;
            }
            start = end;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = model.mse(val.x.view(), val.y.view())?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(NnError::Diverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = (model.params.clone(), model.state.clone(), model.bn_updates),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    if cfg.restore_best {
        model.params = best.0;
        model.state = best.1;
        model.bn_updates = best.2;
    }
    model.history = history;
    model.rng_seed = cfg.rng_seed;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::spec::{AdamConfig, LayerSpec, Shape};
    use rand::Rng;

    #[test]
    fn patience_arithmetic() {
        let mut es = EarlyStopping::new(15);
        let mut stopped_at = None;
        for epoch in 1..=100 {
            let loss = if epoch <= 40 { 1.0 / epoch as f64 } else { 1.0 / 40.0 };
            if es.observe(epoch, loss) == StopDecision::Stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(55));
        assert_eq!(es.best_epoch(), 40);
    }

    fn linear_data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..10).map(|j| 0.3 * (j as f64 - 4.5)).collect();
        let x = Array2::from_shape_fn((n, 10), |_| rng.random_range(0.0..1.0));
        let y = Array2::from_shape_fn((n, 1), |(i, _)| {
            0.5 + (0..10).map(|j| w[j] * x[[i, j]]).sum::<f64>()
        });
        Dataset::new(x, y).unwrap()
    }

    fn linear_spec() -> ModelSpec {
        ModelSpec {
            input_shape: Shape::Flat(10),
            layers: vec![LayerSpec::dense(1)],
            optimizer: AdamConfig::with_lr(0.01),
        }
    }

    #[test]
    fn linear_model_fits_linear_data() {
        let tr = linear_data(512, 1);
        let va = linear_data(128, 2);
        let cfg = TrainConfig {
            batch_size: 32,
            max_epochs: 400,
            rng_seed: 3,
            ..TrainConfig::default()
        };
        let m = train(&linear_spec(), &tr, &va, &cfg).unwrap();
        let mse = m.mse(tr.x.view(), tr.y.view()).unwrap();
        let ys: Vec<f64> = tr.y.iter().copied().collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
        assert!(mse.sqrt() < 0.01 * std, "rmse {} std {}", mse.sqrt(), std);
    }

    #[test]
    fn fixed_seed_reproduces_history() {
        let tr = linear_data(100, 1);
        let va = linear_data(30, 2);
        let cfg = TrainConfig {
            max_epochs: 5,
            rng_seed: 9,
            ..TrainConfig::default()
        };
        let spec = crate::nnet::spec::nn_spec_with(8, 8, 0.5, 0.003);
        let a = train(&spec, &tr, &va, &cfg).unwrap();
        let b = train(&spec, &tr, &va, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn restore_best_never_worse_than_best_epoch() {
        let tr = linear_data(200, 4);
        let va = linear_data(50, 5);
        let cfg = TrainConfig {
            max_epochs: 30,
            early_stopping_patience: 3,
            rng_seed: 1,
            ..TrainConfig::default()
        };
        let spec = crate::nnet::spec::nn_spec_with(16, 16, 0.5, 0.05);
        let m = train(&spec, &tr, &va, &cfg).unwrap();
        let best = m.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        let now = m.mse(va.x.view(), va.y.view()).unwrap();
        assert!(now <= best + 1e-15, "{now} > {best}");
    }

    #[test]
    fn divergence_names_epoch() {
        let mut tr = linear_data(64, 1);
        tr.y.fill(f64::NAN);
        let va = linear_data(16, 2);
        let err = train(&linear_spec(), &tr, &va, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, NnError::Diverged { epoch: 1 }));
    }

    #[test]
    fn empty_sets_rejected() {
        let tr = linear_data(10, 1);
        let empty = Dataset::new(Array2::zeros((0, 10)), Array2::zeros((0, 1))).unwrap();
        assert!(matches!(train(&linear_spec(), &tr, &empty, &TrainConfig::default()), Err(NnError::Input(_))));
        let cfg = TrainConfig { early_stopping_patience: 0, ..TrainConfig::default() };
        assert!(train(&linear_spec(), &tr, &tr, &cfg).is_err());
    }
}
