//! Bias correction of NWP-driven wind power forecasts.
//!
//! The crate covers the whole pipeline: synthetic farm generation
//! ([`datagen`]), SCADA/NWP parsing and feature engineering ([`ingest`]),
//! 49-step forecast sample construction and the monthly day split
//! ([`sampler`]), a small neural-network engine ([`nnet`]), gradient boosted
//! trees ([`gbdt`]), the five forecasters behind one interface ([`models`]),
//! metrics and bias tables ([`eval`]) and model update strategies
//! ([`continual`]).

pub mod continual;
pub mod curve;
pub mod datagen;
pub mod eval;
pub mod gbdt;
pub mod ingest;
pub mod models;
pub mod nnet;
pub mod sampler;
pub mod time;

pub use curve::PowerCurve;

/// Number of hourly steps in one forecast sample (t0 through t0+48h).
pub const HORIZON: usize = 49;
/// Number of predictors per timestep.
pub const N_FEATURES: usize = 10;
/// Nominal turbine power used throughout, in kW.
pub const DEFAULT_CAPACITY_KW: f64 = 2100.0;
