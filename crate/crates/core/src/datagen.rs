//! Reproducible synthetic wind farms with injected NWP biases.
//!
//! A single site wind at the NWP reference height is simulated as a seasonal
//! cycle plus a diurnal cycle plus an AR(1) fluctuation. Each turbine sees
//! that wind with its own offset and turbulence, log-adjusted to hub height,
//! and converts it to power through the truth curve. The NWP forecast is the
//! site wind plus the configured bias terms and a lead-correlated noise.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{DateTime, Duration, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::PowerCurve;
use crate::ingest::{NwpRecord, ScadaRecord};
use crate::time::{local_day_of_year, local_hour_fraction};
use crate::sampler::SampleContext;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid farm configuration: {0}")]
    Invalid(String),
}

/// Climate of the simulated site wind at the NWP reference height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindClimate {
    pub mean_ms: f64,
    /// Windier in winter by this amplitude.
    pub seasonal_amplitude_ms: f64,
    /// Windier at night by this amplitude.
    pub diurnal_amplitude_ms: f64,
    pub ar_std_ms: f64,
    pub ar_timescale_hours: f64,
    /// Independent per-turbine fluctuation on top of the site wind.
    pub turbine_turbulence_std_ms: f64,
    pub power_noise_std_kw: f64,
}

impl Default for WindClimate {
    fn default() -> Self {
        Self {
            mean_ms: 7.0,
            seasonal_amplitude_ms: 1.0,
            diurnal_amplitude_ms: 0.8,
            ar_std_ms: 2.0,
            ar_timescale_hours: 10.0,
            turbine_turbulence_std_ms: 0.3,
            power_noise_std_kw: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FarmConfig {
    pub n_turbines: usize,
    pub start_time: DateTime<Utc>,
    pub duration_days: u32,
    pub nwp_interval_minutes: u32,
    pub nwp_reissue_hours: u32,
    pub nwp_lead_hours: u32,
    pub scada_interval_minutes: u32,
    pub hub_height_m: f64,
    pub nwp_ref_height_m: f64,
    pub capacity_kw: f64,
    /// Fixed offset of local time from UTC, used for the diurnal terms.
    pub tz_offset_hours: f64,
    pub rng_seed: u64,
    pub climate: WindClimate,
}

impl Default for FarmConfig {
    fn default() -> Self {
        Self {
            n_turbines: 2,
            start_time: DateTime::parse_from_rfc3339("2021-01-01T00:00:00Z")
                .unwrap()
                .with_timezone(&Utc),
            duration_days: 60,
            nwp_interval_minutes: 15,
            nwp_reissue_hours: 6,
            nwp_lead_hours: 72,
            scada_interval_minutes: 10,
            hub_height_m: 114.0,
            nwp_ref_height_m: 80.0,
            capacity_kw: crate::DEFAULT_CAPACITY_KW,
            tz_offset_hours: 0.0,
            rng_seed: 42,
            climate: WindClimate::default(),
        }
    }
}

impl FarmConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.n_turbines < 1 {
            return fail("n_turbines must be at least 1");
        }
        if self.duration_days < 1 {
            return fail("duration_days must be at least 1");
        }
        if !(self.hub_height_m > 1.0) || !(self.nwp_ref_height_m > 1.0) {
            return fail("heights must exceed 1 m");
        }
        if !(self.capacity_kw > 0.0) {
            return fail("capacity_kw must be positive");
        }
        if self.nwp_interval_minutes == 0 || self.scada_interval_minutes == 0 {
            return fail("sampling intervals must be positive");
        }
        if self.nwp_reissue_hours == 0 {
            return fail("nwp_reissue_hours must be positive");
        }
        if self.nwp_lead_hours < 49 {
            return fail("nwp_lead_hours must cover a 49-hour sample");
        }
        if (self.nwp_lead_hours as i64) * 60 > crate::ingest::MAX_LEAD_MINUTES {
            return fail("nwp_lead_hours exceeds 72");
        }
        if 60 % self.nwp_interval_minutes != 0 || 60 % self.scada_interval_minutes != 0 {
            return fail("sampling intervals must divide one hour");
        }
        let c = &self.climate;
        if c.ar_std_ms < 0.0 || c.turbine_turbulence_std_ms < 0.0 || c.power_noise_std_kw < 0.0 {
            return fail("noise levels must be non-negative");
        }
        if !(c.ar_timescale_hours > 0.0) {
            return fail("ar_timescale_hours must be positive");
        }
        Ok(())
    }

    pub fn end_time(&self) -> DateTime<Utc> {
        self.start_time + Duration::days(self.duration_days as i64)
    }

    pub fn hub_ratio(&self) -> f64 {
        self.hub_height_m.ln() / self.nwp_ref_height_m.ln()
    }

    /// Sampling context matching this farm's geometry and record intervals.
    pub fn sample_context(&self) -> SampleContext {
        SampleContext {
            hub_height_m: self.hub_height_m,
            nwp_ref_height_m: self.nwp_ref_height_m,
            tz_offset_hours: self.tz_offset_hours,
            scada_interval_minutes: self.scada_interval_minutes,
            nwp_interval_minutes: self.nwp_interval_minutes,
        }
    }

    pub fn turbine_ids(&self) -> Vec<String> {
        (1..=self.n_turbines).map(|i| format!("WT{i:02}")).collect()
    }
}

/// Systematic NWP wind-speed errors injected at the reference height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BiasProfile {
    /// Positive between 06 and 18 local time, negative at night.
    pub diurnal_amplitude_ms: f64,
    /// Positive in summer (peak mid-July), negative in winter.
    pub seasonal_amplitude_ms: f64,
    /// Standard deviation of the per-turbine offset between site and turbine wind.
    pub per_turbine_offset_std_ms: f64,
    pub noise_std_ms: f64,
    /// Constant wind-speed bias.
    pub offset_ms: f64,
}

impl BiasProfile {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.diurnal_amplitude_ms < 0.0
            || self.seasonal_amplitude_ms < 0.0
            || self.per_turbine_offset_std_ms < 0.0
            || self.noise_std_ms < 0.0
        {
            return Err(ConfigError::Invalid("bias amplitudes must be non-negative".into()));
        }
        Ok(())
    }

    /// Diurnal bias term at a fractional local hour.
    pub fn diurnal_term(&self, local_hour: f64) -> f64 {
        self.diurnal_amplitude_ms * (2.0 * PI * (local_hour - 6.0) / 24.0).sin()
    }

    /// Seasonal bias term at a local day of year.
    pub fn seasonal_term(&self, day_of_year: u32) -> f64 {
        -self.seasonal_amplitude_ms * (2.0 * PI * (day_of_year as f64 - 15.0) / 365.25).cos()
    }

    /// Deterministic part of the NWP bias at `t`.
    pub fn systematic(&self, t: DateTime<Utc>, tz_offset_hours: f64) -> f64 {
        self.offset_ms
            + self.diurnal_term(local_hour_fraction(t, tz_offset_hours))
            + self.seasonal_term(local_day_of_year(t, tz_offset_hours))
    }
}

/// A change of bias profile from `start_day` (days after the farm start) on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeShift {
    pub start_day: u32,
    pub bias: BiasProfile,
}

/// Site wind at the NWP reference height on a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindSeries {
    pub start: DateTime<Utc>,
    pub step_minutes: u32,
    pub values: Vec<f64>,
}

impl WindSeries {
    pub fn at(&self, t: DateTime<Utc>) -> Option<f64> {
        let minutes = (t - self.start).num_minutes();
        if minutes < 0 || minutes % self.step_minutes as i64 != 0 {
            return None;
        }
        self.values.get((minutes / self.step_minutes as i64) as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: FarmConfig,
    /// SCADA series keyed by turbine id.
    pub scada: BTreeMap<String, Vec<ScadaRecord>>,
    pub nwp: Vec<NwpRecord>,
    pub truth_curve: PowerCurve,
    pub truth_bias: BiasProfile,
    pub shift: Option<RegimeShift>,
    /// True site wind at the NWP reference height.
    pub site_wind: WindSeries,
    /// Per-turbine constant wind offset (m/s, reference height) before any shift.
    pub turbine_offsets_ms: Vec<f64>,
}

impl SyntheticDataset {
    /// Bias profile in force at `t`.
    pub fn bias_at(&self, t: DateTime<Utc>) -> &BiasProfile {
        match &self.shift {
            Some(s) if t >= self.config.start_time + Duration::days(s.start_day as i64) => &s.bias,
            _ => &self.truth_bias,
        }
    }
}

/// Sidecar manifest written next to generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: FarmConfig,
    pub bias: BiasProfile,
    pub shift: Option<RegimeShift>,
    pub curve: PowerCurve,
    pub rng_seed: u64,
}

impl From<&SyntheticDataset> for DatasetManifest {
    fn from(d: &SyntheticDataset) -> Self {
        DatasetManifest {
            config: d.config.clone(),
            bias: d.truth_bias.clone(),
            shift: d.shift.clone(),
            curve: d.truth_curve.clone(),
            rng_seed: d.config.rng_seed,
        }
    }
}

// Independent random streams so that, e.g., adding turbines leaves the
// site wind and NWP noise unchanged.
const STREAM_SITE: u64 = 1;
const STREAM_NWP: u64 = 2;
const STREAM_OFFSETS: u64 = 3;
const STREAM_TURBINE_BASE: u64 = 100;

const NWP_NOISE_TIMESCALE_HOURS: f64 = 3.0;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn ar1_coefficient(step_minutes: f64, timescale_hours: f64) -> f64 {
    (-step_minutes / (timescale_hours * 60.0)).exp()
}

/// Zero-mean stationary AR(1) path.
fn ar1_path(rng: &mut ChaCha8Rng, n: usize, phi: f64, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let innov = std * (1.0 - phi * phi).sqrt();
    let mut x = std * normal.sample(rng);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(x);
        x = phi * x + innov * normal.sample(rng);
    }
    out
}

/// Generates a farm with a single bias profile.
pub fn generate_farm(config: &FarmConfig, bias: &BiasProfile) -> Result<SyntheticDataset, ConfigError> {
    generate_farm_with_curve(config, bias, None, PowerCurve::synthetic(3.0, 12.0, 25.0, config.capacity_kw))
}

/// Generates a farm whose NWP bias profile changes at `shift.start_day`.
pub fn generate_farm_shifted(
    config: &FarmConfig,
    bias: &BiasProfile,
    shift: &RegimeShift,
) -> Result<SyntheticDataset, ConfigError> {
    generate_farm_with_curve(
        config,
        bias,
        Some(shift.clone()),
        PowerCurve::synthetic(3.0, 12.0, 25.0, config.capacity_kw),
    )
}

pub fn generate_farm_with_curve(
    config: &FarmConfig,
    bias: &BiasProfile,
    shift: Option<RegimeShift>,
    curve: PowerCurve,
) -> Result<SyntheticDataset, ConfigError> {
    config.validate()?;
    bias.validate()?;
    if let Some(s) = &shift {
        s.bias.validate()?;
    }
    curve
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if (curve.capacity_kw - config.capacity_kw).abs() > 1e-9 {
        return Err(ConfigError::Invalid("curve capacity differs from farm capacity".into()));
    }

    let climate = &config.climate;
    let tz = config.tz_offset_hours;
    let step = gcd(config.scada_interval_minutes, config.nwp_interval_minutes);
    let horizon_minutes =
        (config.duration_days as i64 * 24 + config.nwp_lead_hours as i64) * 60;
    let n_grid = (horizon_minutes / step as i64) as usize + 1;
    let grid_time = |i: usize| config.start_time + Duration::minutes(i as i64 * step as i64);

    // Site wind at reference height.
    let mut site_rng = rng(config.rng_seed, STREAM_SITE);
    let phi = ar1_coefficient(step as f64, climate.ar_timescale_hours);
    let fluct = ar1_path(&mut site_rng, n_grid, phi, climate.ar_std_ms);
    let site: Vec<f64> = (0..n_grid)
        .map(|i| {
            let t = grid_time(i);
            let hour = local_hour_fraction(t, tz);
            let doy = local_day_of_year(t, tz) as f64;
            let w = climate.mean_ms
                + climate.seasonal_amplitude_ms * (2.0 * PI * (doy - 15.0) / 365.25).cos()
                + climate.diurnal_amplitude_ms * (2.0 * PI * (hour - 3.0) / 24.0).cos()
                + fluct[i];
            w.max(0.0)
        })
        .collect();
    // Slowly veering wind direction and a temperature cycle share the grid.
    let dir_walk = ar1_path(&mut site_rng, n_grid, ar1_coefficient(step as f64, 24.0), 60.0);
    let temp_noise = ar1_path(&mut site_rng, n_grid, ar1_coefficient(step as f64, 12.0), 2.0);
    let direction: Vec<f64> = dir_walk.iter().map(|d| (225.0 + d).rem_euclid(360.0)).collect();
    let temperature: Vec<f64> = (0..n_grid)
        .map(|i| {
            let t = grid_time(i);
            let hour = local_hour_fraction(t, tz);
            let doy = local_day_of_year(t, tz) as f64;
            10.0 - 8.0 * (2.0 * PI * (doy - 15.0) / 365.25).cos()
                + 4.0 * (2.0 * PI * (hour - 15.0) / 24.0).cos()
                + temp_noise[i]
        })
        .collect();

    let shift_start = shift
        .as_ref()
        .map(|s| config.start_time + Duration::days(s.start_day as i64));
    let profile_at = |t: DateTime<Utc>| -> &BiasProfile {
        match (&shift, shift_start) {
            (Some(s), Some(t0)) if t >= t0 => &s.bias,
            _ => bias,
        }
    };

    // SCADA per turbine.
    let ratio = config.hub_ratio();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut offset_rng = rng(config.rng_seed, STREAM_OFFSETS);
    let offset_z: Vec<f64> = (0..config.n_turbines).map(|_| unit.sample(&mut offset_rng)).collect();
    let scada_stride = (config.scada_interval_minutes / step) as usize;
    let n_scada = (config.duration_days as usize * 24 * 60) / config.scada_interval_minutes as usize;
    let mut scada = BTreeMap::new();
    for (k, id) in config.turbine_ids().into_iter().enumerate() {
        let mut trng = rng(config.rng_seed, STREAM_TURBINE_BASE + k as u64);
        let turb = ar1_path(
            &mut trng,
            n_scada,
            ar1_coefficient(config.scada_interval_minutes as f64, 1.0),
            climate.turbine_turbulence_std_ms,
        );
        let yaw = Normal::new(0.0, 3.0).expect("yaw error");
        let power_noise = climate.power_noise_std_kw;
        let records: Vec<ScadaRecord> = (0..n_scada)
            .map(|j| {
                let gi = j * scada_stride;
                let t = grid_time(gi);
                let offset = offset_z[k] * profile_at(t).per_turbine_offset_std_ms;
                let ws_ref = (site[gi] + offset + turb[j]).max(0.0);
                let ws_hub = ws_ref * ratio;
                let mut power = curve.power_unchecked(ws_hub);
                if power_noise > 0.0 && power > 0.0 {
                    power += power_noise * unit.sample(&mut trng);
                }
                let wind_dir = direction[gi];
                ScadaRecord {
                    turbine_id: id.clone(),
                    timestamp: t,
                    power_kw: power.clamp(0.0, config.capacity_kw),
                    wind_speed_ms: ws_hub,
                    nacelle_dir_deg: (wind_dir + yaw.sample(&mut trng)).rem_euclid(360.0),
                    wind_dir_deg: wind_dir,
                    temp_c: temperature[gi],
                }
            })
            .collect();
        scada.insert(id, records);
    }

    // NWP issuances covering the whole duration, each with the full lead window.
    let mut nwp_rng = rng(config.rng_seed, STREAM_NWP);
    let nwp_stride = (config.nwp_interval_minutes / step) as usize;
    let n_lead = (config.nwp_lead_hours as usize * 60) / config.nwp_interval_minutes as usize + 1;
    let issue_stride = (config.nwp_reissue_hours as usize * 60) / step as usize;
    let n_issues = (config.duration_days as usize * 24).div_ceil(config.nwp_reissue_hours as usize);
    let noise_phi = ar1_coefficient(config.nwp_interval_minutes as f64, NWP_NOISE_TIMESCALE_HOURS);
    let mut nwp = Vec::with_capacity(n_issues * n_lead);
    for issue in 0..n_issues {
        let issue_idx = issue * issue_stride;
        let issue_time = grid_time(issue_idx);
        let unit_noise = ar1_path(&mut nwp_rng, n_lead, noise_phi, 1.0);
        let aux = ar1_path(&mut nwp_rng, n_lead, noise_phi, 1.0);
        for (l, z) in unit_noise.iter().enumerate() {
            let gi = issue_idx + l * nwp_stride;
            let t = grid_time(gi);
            let profile = profile_at(t);
            let ws = (site[gi] + profile.systematic(t, tz) + profile.noise_std_ms * z).max(0.0);
            let hour = local_hour_fraction(t, tz);
            let daylight = (2.0 * PI * (hour - 6.0) / 24.0).sin().max(0.0);
            nwp.push(NwpRecord {
                issue_time,
                valid_time: t,
                lead_minutes: (t - issue_time).num_minutes(),
                wind_speed_ms: ws,
                wind_gust_ms: ws * 1.35 + 0.5 * aux[l].abs(),
                temp_c: temperature[gi] + 0.8 * aux[l],
                wind_dir_deg: (direction[gi] + 10.0 * aux[l]).rem_euclid(360.0),
                radiance: 700.0 * daylight,
                precipitation: (aux[l] - 1.5).max(0.0),
            });
        }
    }

    Ok(SyntheticDataset {
        config: config.clone(),
        scada,
        nwp,
        truth_curve: curve,
        truth_bias: bias.clone(),
        shift,
        site_wind: WindSeries {
            start: config.start_time,
            step_minutes: step,
            values: site,
        },
        turbine_offsets_ms: offset_z
            .iter()
            .map(|z| z * bias.per_turbine_offset_std_ms)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(days: u32) -> FarmConfig {
        FarmConfig {
            n_turbines: 2,
            duration_days: days,
            ..FarmConfig::default()
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let bias = BiasProfile {
            diurnal_amplitude_ms: 1.0,
            noise_std_ms: 0.5,
            ..BiasProfile::zero()
        };
        let a = generate_farm(&small(5), &bias).unwrap();
        let b = generate_farm(&small(5), &bias).unwrap();
        assert_eq!(a, b);
        let c = generate_farm(&FarmConfig { rng_seed: 7, ..small(5) }, &bias).unwrap();
        assert_ne!(a.nwp, c.nwp);
    }

    #[test]
    fn rejects_invalid_config() {
        let bias = BiasProfile::zero();
        for cfg in [
            FarmConfig { duration_days: 0, ..small(1) },
            FarmConfig { hub_height_m: 1.0, ..small(1) },
            FarmConfig { nwp_ref_height_m: 0.5, ..small(1) },
            FarmConfig { n_turbines: 0, ..small(1) },
            FarmConfig { capacity_kw: 0.0, ..small(1) },
        ] {
            assert!(generate_farm(&cfg, &bias).is_err());
        }
        let neg = BiasProfile { noise_std_ms: -1.0, ..BiasProfile::zero() };
        assert!(generate_farm(&small(1), &neg).is_err());
    }

    #[test]
    fn power_within_capacity_and_counts() {
        let d = generate_farm(&small(3), &BiasProfile::zero()).unwrap();
        assert_eq!(d.scada.len(), 2);
        for recs in d.scada.values() {
            assert_eq!(recs.len(), 3 * 144);
            assert!(recs.iter().all(|r| (0.0..=2100.0).contains(&r.power_kw)));
            assert!(recs.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        }
        // 12 issuances, each with 72h of 15-minute values inclusive.
        assert_eq!(d.nwp.len(), 12 * (72 * 4 + 1));
    }

    #[test]
    fn every_day_has_a_full_window_issuance() {
        let cfg = small(10);
        let d = generate_farm(&cfg, &BiasProfile::zero()).unwrap();
        for day in 0..cfg.duration_days as i64 {
            let day_start = cfg.start_time + Duration::days(day);
            let covered = d.nwp.iter().any(|r| {
                r.issue_time >= day_start
                    && r.issue_time < day_start + Duration::days(1)
                    && r.lead_minutes >= 49 * 60
            });
            assert!(covered, "day {day} lacks a full issuance");
        }
    }

    #[test]
    fn zero_bias_is_unbiased() {
        let cfg = FarmConfig { duration_days: 40, ..small(40) };
        let bias = BiasProfile { noise_std_ms: 1.0, ..BiasProfile::zero() };
        let d = generate_farm(&cfg, &bias).unwrap();
        let diffs: Vec<f64> = d
            .nwp
            .iter()
            .filter(|r| r.lead_minutes % 60 == 0)
            .map(|r| r.wind_speed_ms - d.site_wind.at(r.valid_time).unwrap())
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        // Noise is correlated along the lead axis (~3 h) and across
        // overlapping issuances; inflate the naive SEM accordingly.
        let var = diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sem = (var / n).sqrt() * 6.0;
        assert!(mean.abs() < 3.0 * sem, "mean {mean}, sem {sem}");
    }

    #[test]
    fn diurnal_bias_gap_matches_injected_term() {
        let cfg = FarmConfig {
            duration_days: 20,
            climate: WindClimate { mean_ms: 10.0, ar_std_ms: 1.0, ..WindClimate::default() },
            ..small(20)
        };
        let bias = BiasProfile { diurnal_amplitude_ms: 2.0, ..BiasProfile::zero() };
        let d = generate_farm(&cfg, &bias).unwrap();

        // Expected gap: the configured sinusoid evaluated at every emitted
        // valid time, binned the same way.
        let (mut day_sum, mut day_n, mut night_sum, mut night_n) = (0.0, 0.0, 0.0, 0.0);
        let (mut ds, mut dn, mut ns, mut nn) = (0.0, 0.0, 0.0, 0.0);
        for r in &d.nwp {
            let secs = r.valid_time.timestamp().rem_euclid(86_400) as f64;
            let h = secs / 3600.0;
            let v = 2.0 * (2.0 * PI * (h - 6.0) / 24.0).sin();
            let b = r.wind_speed_ms - d.site_wind.at(r.valid_time).unwrap();
            if (6.0..18.0).contains(&h) {
                day_sum += v;
                day_n += 1.0;
                ds += b;
                dn += 1.0;
            } else {
                night_sum += v;
                night_n += 1.0;
                ns += b;
                nn += 1.0;
            }
        }
        let expected = day_sum / day_n - night_sum / night_n;
        let gap = ds / dn - ns / nn;
        assert!(expected > 2.5);
        assert!((gap - expected).abs() < 1e-9, "gap {gap} expected {expected}");
    }

    #[test]
    fn seasonal_bias_recovered_by_month() {
        let cfg = FarmConfig {
            duration_days: 365,
            n_turbines: 1,
            climate: WindClimate { mean_ms: 10.0, ar_std_ms: 1.0, ..WindClimate::default() },
            ..small(365)
        };
        let bias = BiasProfile { seasonal_amplitude_ms: 1.5, noise_std_ms: 0.5, ..BiasProfile::zero() };
        let d = generate_farm(&cfg, &bias).unwrap();
        let mut by_month: BTreeMap<u32, (f64, f64, f64, f64)> = BTreeMap::new();
        for r in d.nwp.iter().filter(|r| r.lead_minutes % 60 == 0) {
            let m = crate::time::local_month(r.valid_time, 0.0);
            let b = r.wind_speed_ms - d.site_wind.at(r.valid_time).unwrap();
            let injected = bias.seasonal_term(local_day_of_year(r.valid_time, 0.0));
            let e = by_month.entry(m).or_default();
            e.0 += b;
            e.1 += injected;
            e.2 += b * b;
            e.3 += 1.0;
        }
        for (m, (s, inj, ss, n)) in by_month {
            let mean = s / n;
            let sd = (ss / n - mean * mean).max(0.0).sqrt();
            let sem = sd / n.sqrt() * 6.0;
            assert!((mean - inj / n).abs() < 3.0 * sem, "month {m}: {mean} vs {}", inj / n);
        }
    }

    #[test]
    fn regime_shift_changes_bias_after_start_day() {
        let cfg = FarmConfig { n_turbines: 1, ..small(10) };
        let shift = RegimeShift {
            start_day: 5,
            bias: BiasProfile { offset_ms: 2.0, ..BiasProfile::zero() },
        };
        let d = generate_farm_shifted(&cfg, &BiasProfile::zero(), &shift).unwrap();
        let cut = cfg.start_time + Duration::days(5);
        for r in d.nwp.iter().filter(|r| r.lead_minutes == 0) {
            let b = r.wind_speed_ms - d.site_wind.at(r.valid_time).unwrap();
            let site = d.site_wind.at(r.valid_time).unwrap();
            if r.valid_time < cut {
                assert!(b.abs() < 1e-12);
            } else if site > 0.0 {
                assert!((b - 2.0).abs() < 1e-12);
            }
        }
        assert_eq!(d.bias_at(cut).offset_ms, 2.0);
    }
}
