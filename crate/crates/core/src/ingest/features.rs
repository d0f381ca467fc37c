use std::f64::consts::PI;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{IngestError, NwpRecord};
use crate::time::{local_day_of_year, local_hour_fraction};
use crate::N_FEATURES;

/// Column order of every feature matrix written or consumed by the crate.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "nwp_ws_adj",
    "nwp_gust",
    "nwp_temp",
    "nwp_dir_sin",
    "nwp_dir_cos",
    "hour_sin",
    "hour_cos",
    "doy_sin",
    "doy_cos",
    "lead_time",
];

/// The ten predictors of one timestep, in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub const WS_ADJ: usize = 0;
    pub const LEAD: usize = 9;

    /// Builds the raw (pre-normalization) features for a forecast valid at
    /// `valid_time`, `lead_hours` after issuance.
    pub fn from_parts(
        hub_adjusted_ws: f64,
        gust: f64,
        temp: f64,
        dir_deg: f64,
        valid_time: DateTime<Utc>,
        lead_hours: f64,
        tz_offset_hours: f64,
    ) -> Self {
        let dir = dir_deg.to_radians();
        let hour = 2.0 * PI * local_hour_fraction(valid_time, tz_offset_hours) / 24.0;
        let doy = local_day_of_year(valid_time, tz_offset_hours) as f64;
        let season = 2.0 * PI * (doy - 1.0) / 365.25;
        FeatureVector([
            hub_adjusted_ws,
            gust,
            temp,
            dir.sin(),
            dir.cos(),
            hour.sin(),
            hour.cos(),
            season.sin(),
            season.cos(),
            lead_hours,
        ])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Log-law extrapolation of an NWP wind speed to hub height.
pub fn adjust_hub_height(ws: f64, h_nwp: f64, h_hub: f64) -> Result<f64, IngestError> {
    if !(h_nwp > 1.0) || !(h_hub > 1.0) {
        return Err(IngestError::Domain { h_nwp, h_hub });
    }
    Ok(ws * h_hub.ln() / h_nwp.ln())
}

/// Raw features of a single NWP record.
pub fn encode_features(rec: &NwpRecord, hub_adjusted_ws: f64, tz_offset_hours: f64) -> FeatureVector {
    FeatureVector::from_parts(
        hub_adjusted_ws,
        rec.wind_gust_ms,
        rec.temp_c,
        rec.wind_dir_deg,
        rec.valid_time,
        rec.lead_minutes as f64 / 60.0,
        tz_offset_hours,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_ts;
    use proptest::prelude::*;

    fn record(valid: &str, dir: f64) -> NwpRecord {
        let valid_time = parse_ts(valid).unwrap();
        let issue_time = parse_ts("2021-03-01T00:00:00Z").unwrap();
        NwpRecord {
            issue_time,
            valid_time,
            lead_minutes: (valid_time - issue_time).num_minutes(),
            wind_speed_ms: 8.0,
            wind_gust_ms: 11.0,
            temp_c: 4.0,
            wind_dir_deg: dir,
            radiance: 0.0,
            precipitation: 0.0,
        }
    }

    #[test]
    fn hub_adjustment_examples() {
        assert_eq!(adjust_hub_height(7.3, 80.0, 80.0).unwrap(), 7.3);
        assert!((adjust_hub_height(10.0, 10.0, 100.0).unwrap() - 20.0).abs() < 1e-12);
        // 8 * ln(114) / ln(80), evaluated with mpmath at 50 digits.
        let v = adjust_hub_height(8.0, 80.0, 114.0).unwrap();
        assert!((v - 8.646_590).abs() < 5e-7, "{v}");
    }

    #[test]
    fn hub_adjustment_rejects_low_heights() {
        assert!(matches!(adjust_hub_height(5.0, 1.0, 100.0), Err(IngestError::Domain { .. })));
        assert!(matches!(adjust_hub_height(5.0, 80.0, 0.5), Err(IngestError::Domain { .. })));
    }

    #[test]
    fn cyclical_examples() {
        let f = encode_features(&record("2021-03-02T00:00:00Z", 90.0), 8.0, 0.0);
        assert_eq!((f.0[5], f.0[6]), (0.0, 1.0));
        assert!((f.0[3] - 1.0).abs() < 1e-15 && f.0[4].abs() < 1e-15);
        assert_eq!(f.0[FeatureVector::LEAD], 24.0);

        let f = encode_features(&record("2021-03-02T06:00:00Z", 0.0), 8.0, 0.0);
        assert!((f.0[5] - 1.0).abs() < 1e-12 && f.0[6].abs() < 1e-12);
        // local offset moves the hour angle
        let f = encode_features(&record("2021-03-02T05:00:00Z", 0.0), 8.0, 1.0);
        assert!((f.0[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn day_of_year_starts_at_zero_angle() {
        let f = encode_features(&record("2021-01-01T12:00:00Z", 0.0), 8.0, 0.0);
        assert_eq!((f.0[7], f.0[8]), (0.0, 1.0));
    }

    proptest! {
        #[test]
        fn pairs_on_unit_circle(minutes in 0i64..(366 * 24 * 60), dir in 0.0f64..360.0, tz in -12.0f64..12.0) {
            let t = parse_ts("2020-01-01T00:00:00Z").unwrap() + chrono::Duration::minutes(minutes);
            let f = FeatureVector::from_parts(5.0, 6.0, 7.0, dir, t, 3.0, tz.round());
            for (s, c) in [(3, 4), (5, 6), (7, 8)] {
                prop_assert!((f.0[s].powi(2) + f.0[c].powi(2) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn hub_adjustment_linear(ws in 0.0f64..40.0, a in 0.0f64..10.0, h1 in 1.5f64..200.0, h2 in 1.5f64..200.0) {
            let lhs = adjust_hub_height(a * ws, h1, h2).unwrap();
            let rhs = a * adjust_hub_height(ws, h1, h2).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
