//! Forecast error metrics, bias tables and model comparison.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::ForecastSample;
use crate::time::{local_hour, local_month};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("input error: {0}")]
    Input(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub mb: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// Errors of one model on K samples. Aggregates are unweighted means of the
/// per-sample values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub capacity_kw: f64,
    pub mb: f64,
    pub mae: f64,
    pub rmse: f64,
    pub nrmse: f64,
    /// Standard deviation of the per-sample RMSE values.
    pub rmse_sample_std: f64,
    pub per_sample: Vec<SampleMetrics>,
}

impl MetricsReport {
    /// Aggregates already-computed per-sample metrics.
    pub fn from_samples(per_sample: Vec<SampleMetrics>, capacity_kw: f64) -> Result<Self, EvalError> {
        if per_sample.is_empty() {
            return Err(EvalError::Input("no samples to evaluate".into()));
        }
        if !(capacity_kw > 0.0) {
            return Err(EvalError::Input(format!("capacity must be positive, got {capacity_kw}")));
        }
        let k = per_sample.len();
        let mean = |f: fn(&SampleMetrics) -> f64| per_sample.iter().map(f).sum::<f64>() / k as f64;
        let (mb, mae, rmse) = (mean(|m| m.mb), mean(|m| m.mae), mean(|m| m.rmse));
        let rmse_sample_std = sample_std(per_sample.iter().map(|m| m.rmse));
        Ok(Self {
            k,
            capacity_kw,
            mb,
            mae,
            rmse,
            nrmse: nrmse(rmse, capacity_kw),
            rmse_sample_std,
            per_sample,
        })
    }
}

/// RMSE as a percentage of installed capacity.
pub fn nrmse(rmse_kw: f64, capacity_kw: f64) -> f64 {
    rmse_kw * 100.0 / capacity_kw
}

pub fn sample_metrics(pred: &[f64], truth: &[f64]) -> SampleMetrics {
    let t = pred.len() as f64;
    let (mut sb, mut sa, mut ss) = (0.0, 0.0, 0.0);
    for (p, y) in pred.iter().zip(truth) {
        let e = p - y;
        sb += e;
        sa += e.abs();
        ss += e * e;
    }
    SampleMetrics {
        mb: sb / t,
        mae: sa / t,
        rmse: (ss / t).sqrt(),
    }
}

/// Mean bias (prediction minus observation), MAE and RMSE per sample over
/// its timesteps, then averaged over samples.
pub fn compute_metrics(preds: &[Vec<f64>], truth: &[Vec<f64>], capacity_kw: f64) -> Result<MetricsReport, EvalError> {
    if preds.len() != truth.len() {
        return Err(EvalError::Input(format!(
            "{} predicted samples but {} observed",
            preds.len(),
            truth.len()
        )));
    }
    let mut per_sample = Vec::with_capacity(preds.len());
    for (k, (p, y)) in preds.iter().zip(truth).enumerate() {
        if p.len() != y.len() || p.is_empty() {
            return Err(EvalError::Input(format!(
                "sample {k}: {} predictions vs {} observations",
                p.len(),
                y.len()
            )));
        }
        if p.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(EvalError::Input(format!("sample {k}: non-finite value")));
        }
        per_sample.push(sample_metrics(p, y));
    }
    MetricsReport::from_samples(per_sample, capacity_kw)
}

/// Standard deviation with n-1 denominator; 0 for fewer than two values.
pub fn sample_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Standard error of the mean paired difference `a - b`, by bootstrap
/// resampling of the pairs.
pub fn paired_bootstrap_se(a: &[f64], b: &[f64], n_resamples: usize, seed: u64) -> f64 {
    assert_eq!(a.len(), b.len(), "paired inputs");
    let n = a.len();
    if n == 0 || n_resamples < 2 {
        return 0.0;
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<f64> = (0..n_resamples)
        .map(|_| (0..n).map(|_| diff[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    sample_std(means.iter().copied())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasDimension {
    Month,
    LocalHour,
    TurbineHour,
}

impl BiasDimension {
    pub fn name(self) -> &'static str {
        match self {
            BiasDimension::Month => "month",
            BiasDimension::LocalHour => "local_hour",
            BiasDimension::TurbineHour => "turbine_hour",
        }
    }
}

/// One predicted/observed timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub turbine_id: String,
    pub time: DateTime<Utc>,
    pub pred_kw: f64,
    pub truth_kw: f64,
}

/// Flattens samples and their per-step predictions into observations.
pub fn observations(samples: &[ForecastSample], preds: &[Vec<f64>]) -> Vec<Observation> {
    samples
        .iter()
        .zip(preds)
        .flat_map(|(s, p)| {
            s.targets.iter().zip(p).enumerate().map(move |(step, (&y, &yhat))| Observation {
                turbine_id: s.turbine_id.clone(),
                time: s.time_at(step),
                pred_kw: yhat,
                truth_kw: y,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasBin {
    /// Only set for the turbine by hour dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turbine_id: Option<String>,
    /// Month 1-12 or local hour 0-23.
    pub bin: u32,
    pub n: usize,
    pub mean_bias: f64,
    pub std: f64,
}

/// Mean of `pred - truth` per bin. Bins without observations are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    pub dimension: BiasDimension,
    pub bins: Vec<BiasBin>,
}

impl BiasTable {
    pub fn get(&self, bin: u32) -> Option<&BiasBin> {
        self.bins.iter().find(|b| b.bin == bin && b.turbine_id.is_none())
    }

    /// Bins of the dimension's full range that received no observation.
    pub fn empty_bins(&self) -> Vec<u32> {
        let range = match self.dimension {
            BiasDimension::Month => 1..=12,
            _ => 0..=23,
        };
        range.filter(|b| !self.bins.iter().any(|x| x.bin == *b)).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        let with_turbine = self.dimension == BiasDimension::TurbineHour;
        if with_turbine {
            w.write_record(["turbine_id", "bin", "n", "mean_bias", "std"])?;
        } else {
            w.write_record(["bin", "n", "mean_bias", "std"])?;
        }
        for b in &self.bins {
            let mut rec = Vec::with_capacity(5);
            if with_turbine {
                rec.push(b.turbine_id.clone().unwrap_or_default());
            }
            rec.extend([b.bin.to_string(), b.n.to_string(), fmt(b.mean_bias), fmt(b.std)]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn bias_table(obs: &[Observation], dimension: BiasDimension, tz_offset_hours: f64) -> BiasTable {
    let mut groups: BTreeMap<(Option<&str>, u32), Vec<f64>> = BTreeMap::new();
    for o in obs {
        let key = match dimension {
            BiasDimension::Month => (None, local_month(o.time, tz_offset_hours)),
            BiasDimension::LocalHour => (None, local_hour(o.time, tz_offset_hours)),
            BiasDimension::TurbineHour => (Some(o.turbine_id.as_str()), local_hour(o.time, tz_offset_hours)),
        };
        groups.entry(key).or_default().push(o.pred_kw - o.truth_kw);
    }
    let bins = groups
        .into_iter()
        .map(|((turbine, bin), v)| BiasBin {
            turbine_id: turbine.map(str::to_string),
            bin,
            n: v.len(),
            mean_bias: v.iter().sum::<f64>() / v.len() as f64,
            std: sample_std(v.iter().copied()),
        })
        .collect();
    BiasTable { dimension, bins }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub mb: f64,
    pub mae: f64,
    pub rmse: f64,
    pub nrmse: f64,
    /// MAE as a percentage of the baseline's.
    pub mae_pct: f64,
    /// RMSE as a percentage of the baseline's.
    pub rmse_pct: f64,
    /// 1 for the lowest RMSE; equal RMSE shares the lower rank.
    pub rank: usize,
}

/// Value as a percentage of a reference value.
pub fn percent_of(value: f64, reference: f64) -> f64 {
    value / reference * 100.0
}

/// Ranks by RMSE, lowest first, ties sharing the lower rank.
pub fn rank_by_rmse(rmse: &[f64]) -> Vec<usize> {
    rmse.iter()
        .map(|r| 1 + rmse.iter().filter(|o| *o < r).count())
        .collect()
}

/// Relative errors against the baseline and rank among `reports`.
pub fn compare_models(reports: &[(String, MetricsReport)], baseline: &MetricsReport) -> Result<Vec<ComparisonRow>, EvalError> {
    for (name, r) in reports {
        if r.k != baseline.k {
            return Err(EvalError::Integrity(format!(
                "model {name} evaluated on {} samples, baseline on {}",
                r.k, baseline.k
            )));
        }
    }
    let ranks = rank_by_rmse(&reports.iter().map(|(_, r)| r.rmse).collect::<Vec<_>>());
    Ok(reports
        .iter()
        .zip(ranks)
        .map(|((name, r), rank)| ComparisonRow {
            model: name.clone(),
            mb: r.mb,
            mae: r.mae,
            rmse: r.rmse,
            nrmse: r.nrmse,
            mae_pct: percent_of(r.mae, baseline.mae),
            rmse_pct: percent_of(r.rmse, baseline.rmse),
            rank,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
            std: sample_std(values.iter().copied()),
        }
    }
}

/// Absolute errors of one model summarized across turbines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummaryRow {
    pub model: String,
    pub n_turbines: usize,
    pub mb: MeanStd,
    pub mae: MeanStd,
    pub rmse: MeanStd,
    pub nrmse: MeanStd,
}

/// Relative errors and rank of one model averaged across turbines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeSummaryRow {
    pub model: String,
    pub n_turbines: usize,
    pub mae_pct: f64,
    pub rmse_pct: f64,
    pub mean_rank: f64,
}

/// Per-turbine metrics of every model, the baseline included under its own
/// name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FarmResults {
    /// turbine -> model -> report
    pub turbines: BTreeMap<String, BTreeMap<String, MetricsReport>>,
}

impl FarmResults {
    pub fn insert(&mut self, turbine: &str, model: &str, report: MetricsReport) {
        self.turbines
            .entry(turbine.to_string())
            .or_default()
            .insert(model.to_string(), report);
    }

    fn models(&self) -> Vec<String> {
        let mut names: Vec<String> = self.turbines.values().flat_map(|m| m.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn error_summary(&self) -> Vec<ErrorSummaryRow> {
        self.models()
            .into_iter()
            .map(|model| {
                let reps: Vec<&MetricsReport> = self.turbines.values().filter_map(|m| m.get(&model)).collect();
                let col = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reps.iter().map(|r| f(r)).collect::<Vec<_>>());
                ErrorSummaryRow {
                    model,
                    n_turbines: reps.len(),
                    mb: col(|r| r.mb),
                    mae: col(|r| r.mae),
                    rmse: col(|r| r.rmse),
                    nrmse: col(|r| r.nrmse),
                }
            })
            .collect()
    }

    /// Per-turbine comparison against `baseline`; ranks exclude the baseline.
    pub fn comparisons(&self, baseline: &str) -> Result<BTreeMap<String, Vec<ComparisonRow>>, EvalError> {
        let mut out = BTreeMap::new();
        for (turbine, models) in &self.turbines {
            let base = models
                .get(baseline)
                .ok_or_else(|| EvalError::Input(format!("turbine {turbine} has no {baseline} report")))?;
            let others: Vec<(String, MetricsReport)> = models
                .iter()
                .filter(|(n, _)| n.as_str() != baseline)
                .map(|(n, r)| (n.clone(), r.clone()))
                .collect();
            out.insert(turbine.clone(), compare_models(&others, base)?);
        }
        Ok(out)
    }

    pub fn relative_summary(&self, baseline: &str) -> Result<Vec<RelativeSummaryRow>, EvalError> {
        let per_turbine = self.comparisons(baseline)?;
        let mut acc: BTreeMap<String, Vec<&ComparisonRow>> = BTreeMap::new();
        for rows in per_turbine.values() {
            for r in rows {
                acc.entry(r.model.clone()).or_default().push(r);
            }
        }
        Ok(acc
            .into_iter()
            .map(|(model, rows)| {
                let n = rows.len() as f64;
                RelativeSummaryRow {
                    model,
                    n_turbines: rows.len(),
                    mae_pct: rows.iter().map(|r| r.mae_pct).sum::<f64>() / n,
                    rmse_pct: rows.iter().map(|r| r.rmse_pct).sum::<f64>() / n,
                    mean_rank: rows.iter().map(|r| r.rank as f64).sum::<f64>() / n,
                }
            })
            .collect())
    }
}

/// Fixed six-decimal rendering used by every report.
pub fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_error_summary_csv<W: Write>(out: W, rows: &[ErrorSummaryRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model", "n_turbines", "mb", "mb_std", "mae", "mae_std", "rmse", "rmse_std", "nrmse", "nrmse_std",
    ])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.n_turbines.to_string(),
            fmt(r.mb.mean),
            fmt(r.mb.std),
            fmt(r.mae.mean),
            fmt(r.mae.std),
            fmt(r.rmse.mean),
            fmt(r.rmse.std),
            fmt(r.nrmse.mean),
            fmt(r.nrmse.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_relative_summary_csv<W: Write>(out: W, rows: &[RelativeSummaryRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "n_turbines", "mae_pct", "rmse_pct", "mean_rank"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.n_turbines.to_string(),
            fmt(r.mae_pct),
            fmt(r.rmse_pct),
            fmt(r.mean_rank),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison_csv<W: Write>(out: W, per_turbine: &BTreeMap<String, Vec<ComparisonRow>>) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["turbine_id", "model", "mb", "mae", "rmse", "nrmse", "mae_pct", "rmse_pct", "rank"])?;
    for (turbine, rows) in per_turbine {
        for r in rows {
            w.write_record([
                turbine.clone(),
                r.model.clone(),
                fmt(r.mb),
                fmt(r.mae),
                fmt(r.rmse),
                fmt(r.nrmse),
                fmt(r.mae_pct),
                fmt(r.rmse_pct),
                r.rank.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
