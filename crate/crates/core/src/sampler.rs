//! Matching NWP issuances with SCADA power into 49-step forecast samples,
//! and the monthly consecutive-day train/validation/test split.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{adjust_hub_height, FeatureVector, IngestError, Normalizer, NwpRecord, ScadaRecord, FEATURE_NAMES};
use crate::time::{format_ts, parse_ts, utc_date};
use crate::{HORIZON, N_FEATURES};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("split error: {0}")]
    Split(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("malformed sample file: {0}")]
    Format(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One matched window of hourly NWP features and observed power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSample {
    pub turbine_id: String,
    pub t0: DateTime<Utc>,
    /// Raw features for t0, t0+1h, ..., t0+48h.
    pub features: Vec<FeatureVector>,
    /// Hourly mean SCADA power in kW, aligned with `features`.
    pub targets: Vec<f64>,
}

impl ForecastSample {
    pub fn time_at(&self, step: usize) -> DateTime<Utc> {
        self.t0 + Duration::hours(step as i64)
    }

    /// Hub-adjusted NWP wind speed per step, in m/s.
    pub fn hub_wind(&self) -> impl Iterator<Item = f64> + '_ {
        self.features.iter().map(|f| f.0[FeatureVector::WS_ADJ])
    }

    /// Row-major `HORIZON x N_FEATURES` copy of the raw features.
    pub fn feature_matrix(&self) -> Vec<f64> {
        self.features.iter().flat_map(|f| f.0).collect()
    }
}

/// Physical context needed to turn raw records into features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleContext {
    pub hub_height_m: f64,
    pub nwp_ref_height_m: f64,
    pub tz_offset_hours: f64,
    pub scada_interval_minutes: u32,
    pub nwp_interval_minutes: u32,
}

impl Default for SampleContext {
    fn default() -> Self {
        Self {
            hub_height_m: 114.0,
            nwp_ref_height_m: 80.0,
            tz_offset_hours: 0.0,
            scada_interval_minutes: 10,
            nwp_interval_minutes: 15,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub samples: Vec<ForecastSample>,
    pub warnings: Vec<String>,
}

#[derive(Default, Clone, Copy)]
struct NwpBin {
    n: u32,
    ws: f64,
    gust: f64,
    temp: f64,
    dir_sin: f64,
    dir_cos: f64,
}

fn hour_floor(t: DateTime<Utc>) -> DateTime<Utc> {
    t.with_minute(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("valid time")
}

/// Builds one candidate sample per NWP issuance and keeps those whose 49
/// hourly bins are all populated, for a single turbine's SCADA series.
pub fn build_samples(
    nwp: &[NwpRecord],
    scada: &[ScadaRecord],
    ctx: &SampleContext,
) -> Result<SampleSet, SampleError> {
    let mut out = SampleSet::default();
    let Some(first) = scada.first() else {
        out.warnings.push("empty SCADA series".into());
        return Ok(out);
    };
    if nwp.is_empty() {
        out.warnings.push("empty NWP series".into());
        return Ok(out);
    }
    let turbine_id = first.turbine_id.clone();
    if scada.iter().any(|r| r.turbine_id != turbine_id) {
        return Err(SampleError::Format("build_samples expects a single turbine".into()));
    }
    // validates the heights once
    adjust_hub_height(1.0, ctx.nwp_ref_height_m, ctx.hub_height_m)?;

    let scada_needed = (60 / ctx.scada_interval_minutes.max(1)).div_ceil(2).max(1);
    let nwp_needed = (60 / ctx.nwp_interval_minutes.max(1)).div_ceil(2).max(1);

    let mut power_bins: BTreeMap<DateTime<Utc>, (f64, u32)> = BTreeMap::new();
    for r in scada {
        let e = power_bins.entry(hour_floor(r.timestamp)).or_default();
        e.0 += r.power_kw;
        e.1 += 1;
    }

    let scada_start = scada.iter().map(|r| r.timestamp).min().expect("non-empty");
    let scada_end = scada.iter().map(|r| r.timestamp).max().expect("non-empty");
    let nwp_start = nwp.iter().map(|r| r.valid_time).min().expect("non-empty");
    let nwp_end = nwp.iter().map(|r| r.valid_time).max().expect("non-empty");
    if nwp_end < scada_start || scada_end < nwp_start {
        let msg = format!(
            "no overlap between NWP ({} .. {}) and SCADA ({} .. {}) for {turbine_id}",
            format_ts(nwp_start),
            format_ts(nwp_end),
            format_ts(scada_start),
            format_ts(scada_end)
        );
        log::warn!("{msg}");
        out.warnings.push(msg);
        return Ok(out);
    }

    let mut by_issue: BTreeMap<DateTime<Utc>, Vec<&NwpRecord>> = BTreeMap::new();
    for r in nwp {
        by_issue.entry(r.issue_time).or_default().push(r);
    }

    let ratio = ctx.hub_height_m.ln() / ctx.nwp_ref_height_m.ln();
    let mut skipped_unaligned = 0usize;
    for (issue, records) in by_issue {
        if hour_floor(issue) != issue {
            skipped_unaligned += 1;
            continue;
        }
        let mut bins = [NwpBin::default(); HORIZON];
        for r in records {
            let minutes = (r.valid_time - issue).num_minutes();
            if minutes < 0 {
                continue;
            }
            let k = (minutes / 60) as usize;
            if k >= HORIZON {
                continue;
            }
            let b = &mut bins[k];
            let dir = r.wind_dir_deg.to_radians();
            b.n += 1;
            b.ws += r.wind_speed_ms * ratio;
            b.gust += r.wind_gust_ms;
            b.temp += r.temp_c;
            b.dir_sin += dir.sin();
            b.dir_cos += dir.cos();
        }

        let mut features = Vec::with_capacity(HORIZON);
        let mut targets = Vec::with_capacity(HORIZON);
        for (k, b) in bins.iter().enumerate() {
            let t = issue + Duration::hours(k as i64);
            let Some(&(p_sum, p_n)) = power_bins.get(&t) else { break };
            if p_n < scada_needed || b.n < nwp_needed {
                break;
            }
            let n = b.n as f64;
            let dir_deg = b.dir_sin.atan2(b.dir_cos).to_degrees().rem_euclid(360.0);
            features.push(FeatureVector::from_parts(
                b.ws / n,
                b.gust / n,
                b.temp / n,
                dir_deg,
                t,
                k as f64,
                ctx.tz_offset_hours,
            ));
            targets.push(p_sum / p_n as f64);
        }
        if features.len() == HORIZON {
            out.samples.push(ForecastSample {
                turbine_id: turbine_id.clone(),
                t0: issue,
                features,
                targets,
            });
        }
    }
    if skipped_unaligned > 0 {
        out.warnings
            .push(format!("{skipped_unaligned} issuances not on a full hour were skipped"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Day to partition map shared by every turbine of a farm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayAssignment {
    pub seed: u64,
    pub days: BTreeMap<NaiveDate, Partition>,
}

/// Sample indices per partition for one turbine.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn indices(&self, p: Partition) -> &[usize] {
        match p {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }
}

/// Length of the validation and test runs for a month with `n_days` days.
pub fn run_length(n_days: usize) -> usize {
    (0.2 * n_days as f64).round() as usize
}

/// Assigns every calendar day in `first..=last` to a partition. Per calendar
/// month, a validation run and a test run of `round(0.2 * days)` consecutive
/// days each are placed by rejection sampling; the rest is training.
pub fn assign_days(first: NaiveDate, last: NaiveDate, seed: u64) -> Result<DayAssignment, SampleError> {
    if last < first {
        return Err(SampleError::Split("empty day range".into()));
    }
    let mut months: BTreeMap<(i32, u32), Vec<NaiveDate>> = BTreeMap::new();
    let mut d = first;
    while d <= last {
        months.entry((d.year(), d.month())).or_default().push(d);
        d = d.succ_opt().expect("date in range");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut days = BTreeMap::new();
    for ((year, month), month_days) in months {
        let n = month_days.len();
        let r = run_length(n);
        for &day in &month_days {
            days.insert(day, Partition::Train);
        }
        if r == 0 {
            log::debug!("{year}-{month:02} has {n} day(s); all assigned to training");
            continue;
        }
        if 2 * r > n {
            return Err(SampleError::Split(format!(
                "{year}-{month:02} has {n} days, too short for two runs of {r}"
            )));
        }
        let (val_start, test_start) = loop {
            let v = rng.random_range(0..=n - r);
            let t = rng.random_range(0..=n - r);
            if v + r <= t || t + r <= v {
                break (v, t);
            }
        };
        for &day in &month_days[val_start..val_start + r] {
            days.insert(day, Partition::Validation);
        }
        for &day in &month_days[test_start..test_start + r] {
            days.insert(day, Partition::Test);
        }
    }
    if !days.values().any(|p| *p == Partition::Validation) || !days.values().any(|p| *p == Partition::Test) {
        return Err(SampleError::Split(
            "no month long enough to host validation and test runs".into(),
        ));
    }
    Ok(DayAssignment { seed, days })
}

impl DayAssignment {
    /// Day assignment spanning the t0 days of `samples`.
    pub fn for_samples<'a, I>(samples: I, seed: u64) -> Result<Self, SampleError>
    where
        I: IntoIterator<Item = &'a ForecastSample>,
    {
        let days: BTreeSet<NaiveDate> = samples.into_iter().map(|s| utc_date(s.t0)).collect();
        match (days.first(), days.last()) {
            (Some(&a), Some(&b)) => assign_days(a, b, seed),
            _ => Err(SampleError::Split("no samples to split".into())),
        }
    }

    pub fn partition_of(&self, t: DateTime<Utc>) -> Option<Partition> {
        self.days.get(&utc_date(t)).copied()
    }

    /// Splits one turbine's samples by the partition of their t0 day. With
    /// `strict_boundaries`, samples whose window reaches a day of another
    /// partition are dropped.
    pub fn split(&self, samples: &[ForecastSample], strict_boundaries: bool) -> DatasetSplit {
        let mut split = DatasetSplit::default();
        for (i, s) in samples.iter().enumerate() {
            let Some(p) = self.partition_of(s.t0) else { continue };
            if strict_boundaries {
                let end = s.time_at(HORIZON - 1);
                let mut day = utc_date(s.t0);
                let mut crosses = false;
                while day <= utc_date(end) {
                    if self.days.get(&day).is_some_and(|q| *q != p) {
                        crosses = true;
                    }
                    day = day.succ_opt().expect("date in range");
                }
                if crosses {
                    continue;
                }
            }
            match p {
                Partition::Train => split.train.push(i),
                Partition::Validation => split.validation.push(i),
                Partition::Test => split.test.push(i),
            }
        }
        split
    }
}

/// Splits a single turbine's samples with a freshly drawn day map.
pub fn split_monthly(samples: &[ForecastSample], seed: u64) -> Result<(DayAssignment, DatasetSplit), SampleError> {
    let assignment = DayAssignment::for_samples(samples, seed)?;
    let split = assignment.split(samples, false);
    Ok((assignment, split))
}

/// One turbine's samples, its split and the normalizer fit on its training
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTurbine {
    pub samples: Vec<ForecastSample>,
    pub split: DatasetSplit,
    pub normalizer: Normalizer,
    pub warnings: Vec<String>,
}

impl PreparedTurbine {
    pub fn part(&self, p: Partition) -> Vec<ForecastSample> {
        self.split.indices(p).iter().map(|&i| self.samples[i].clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFarm {
    pub days: DayAssignment,
    pub turbines: BTreeMap<String, PreparedTurbine>,
}

/// Builds samples for every turbine, draws one day map over all of them
/// and fits a normalizer per turbine on its training partition.
pub fn prepare_farm(
    nwp: &[NwpRecord],
    scada: &BTreeMap<String, Vec<ScadaRecord>>,
    ctx: &SampleContext,
    capacity_kw: f64,
    split_seed: u64,
    strict_boundaries: bool,
) -> Result<PreparedFarm, SampleError> {
    let mut sets = BTreeMap::new();
    for (id, records) in scada {
        let set = build_samples(nwp, records, ctx)?;
        if !set.samples.is_empty() {
            sets.insert(id.clone(), set);
        }
    }
    if sets.is_empty() {
        return Err(SampleError::Split("no turbine has a complete forecast sample".into()));
    }
    let days = DayAssignment::for_samples(sets.values().flat_map(|s| &s.samples), split_seed)?;
    let mut turbines = BTreeMap::new();
    for (id, set) in sets {
        let split = days.split(&set.samples, strict_boundaries);
        if split.train.is_empty() {
            return Err(SampleError::Split(format!("turbine {id} has no training samples")));
        }
        let normalizer = Normalizer::fit(
            split.train.iter().flat_map(|&i| set.samples[i].features.iter().map(FeatureVector::as_slice)),
            capacity_kw,
        )?;
        turbines.insert(
            id,
            PreparedTurbine {
                samples: set.samples,
                split,
                normalizer,
                warnings: set.warnings,
            },
        );
    }
    Ok(PreparedFarm { days, turbines })
}

/// Writes samples as one delimited row per step:
/// `sample,t0,step,<features...>,target_kw`.
pub fn write_samples<W: Write>(out: W, samples: &[ForecastSample]) -> Result<(), SampleError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["turbine_id", "sample", "t0", "step"];
    header.extend(FEATURE_NAMES);
    header.push("target_kw");
    w.write_record(&header)?;
    for (i, s) in samples.iter().enumerate() {
        for (step, (f, y)) in s.features.iter().zip(&s.targets).enumerate() {
            let mut row = vec![
                s.turbine_id.clone(),
                i.to_string(),
                format_ts(s.t0),
                step.to_string(),
            ];
            row.extend(f.0.iter().map(|v| v.to_string()));
            row.push(y.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| SampleError::Format(e.to_string()))?;
    Ok(())
}

pub fn read_samples<R: Read>(input: R) -> Result<Vec<ForecastSample>, SampleError> {
    let mut r = csv::Reader::from_reader(input);
    let mut samples: Vec<ForecastSample> = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row?;
        if row.len() != 4 + N_FEATURES + 1 {
            return Err(SampleError::Format(format!("row {} has {} columns", line + 2, row.len())));
        }
        let bad = |what: &str| SampleError::Format(format!("row {}: bad {what}", line + 2));
        let idx: usize = row[1].parse().map_err(|_| bad("sample index"))?;
        let t0 = parse_ts(&row[2]).ok_or_else(|| bad("t0"))?;
        let step: usize = row[3].parse().map_err(|_| bad("step"))?;
        let mut f = [0.0; N_FEATURES];
        for (j, v) in f.iter_mut().enumerate() {
            *v = row[4 + j].parse().map_err(|_| bad(FEATURE_NAMES[j]))?;
        }
        let target: f64 = row[4 + N_FEATURES].parse().map_err(|_| bad("target"))?;
        if step == 0 {
            if idx != samples.len() {
                return Err(bad("sample order"));
            }
            samples.push(ForecastSample {
                turbine_id: row[0].to_string(),
                t0,
                features: Vec::with_capacity(HORIZON),
                targets: Vec::with_capacity(HORIZON),
            });
        }
        let n_samples = samples.len();
        let s = samples.last_mut().ok_or_else(|| bad("leading step"))?;
        if idx + 1 != n_samples || step != s.features.len() || s.t0 != t0 {
            return Err(bad("step sequence"));
        }
        s.features.push(FeatureVector(f));
        s.targets.push(target);
    }
    if samples.iter().any(|s| s.features.len() != HORIZON) {
        return Err(SampleError::Format("truncated sample".into()));
    }
    Ok(samples)
}
