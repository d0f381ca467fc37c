//! Piecewise-linear turbine power curve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("wind speed must be non-negative and finite, got {0}")]
    NegativeWindSpeed(f64),
    #[error("invalid power curve: {0}")]
    Invalid(String),
}

/// Monotone wind-speed to power lookup.
///
/// Between knots the power is linearly interpolated. Below the first knot the
/// output is zero, and at or above `cut_out_ms` the turbine is shut down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    /// Knot wind speeds in m/s, strictly increasing.
    pub speeds_ms: Vec<f64>,
    /// Power at each knot, in kW.
    pub powers_kw: Vec<f64>,
    pub cut_out_ms: f64,
    pub capacity_kw: f64,
}

impl PowerCurve {
    pub fn new(
        speeds_ms: Vec<f64>,
        powers_kw: Vec<f64>,
        cut_out_ms: f64,
        capacity_kw: f64,
    ) -> Result<Self, CurveError> {
        let curve = Self {
            speeds_ms,
            powers_kw,
            cut_out_ms,
            capacity_kw,
        };
        curve.validate()?;
        Ok(curve)
    }

    /// Synthetic curve with a cubic ramp between cut-in and rated speed,
    /// tabulated every 0.5 m/s.
    pub fn synthetic(cut_in_ms: f64, rated_ms: f64, cut_out_ms: f64, capacity_kw: f64) -> Self {
        let mut speeds = Vec::new();
        let mut powers = Vec::new();
        let n_knots = (cut_out_ms / 0.5).floor() as usize;
        for i in 0..=n_knots {
            let v = i as f64 * 0.5;
            let p = if v <= cut_in_ms {
                0.0
            } else if v >= rated_ms {
                capacity_kw
            } else {
                capacity_kw * (v.powi(3) - cut_in_ms.powi(3)) / (rated_ms.powi(3) - cut_in_ms.powi(3))
            };
            speeds.push(v);
            powers.push(p);
        }
        Self {
            speeds_ms: speeds,
            powers_kw: powers,
            cut_out_ms,
            capacity_kw,
        }
    }

    pub fn validate(&self) -> Result<(), CurveError> {
        if self.speeds_ms.len() < 2 || self.speeds_ms.len() != self.powers_kw.len() {
            return Err(CurveError::Invalid(
                "need at least two knots with matching power values".into(),
            ));
        }
        if !(self.capacity_kw > 0.0) {
            return Err(CurveError::Invalid("capacity must be positive".into()));
        }
        for w in self.speeds_ms.windows(2) {
            if !(w[1] > w[0]) {
                return Err(CurveError::Invalid("knot speeds must increase".into()));
            }
        }
        if self
            .powers_kw
            .iter()
            .any(|p| !p.is_finite() || *p < 0.0 || *p > self.capacity_kw)
        {
            return Err(CurveError::Invalid("knot power outside [0, capacity]".into()));
        }
        Ok(())
    }

    pub fn power(&self, ws: f64) -> Result<f64, CurveError> {
        if !(ws >= 0.0) || !ws.is_finite() {
            return Err(CurveError::NegativeWindSpeed(ws));
        }
        Ok(self.power_unchecked(ws))
    }

    /// Same as [`PowerCurve::power`] but treats negative speeds as calm.
    pub fn power_unchecked(&self, ws: f64) -> f64 {
        if ws >= self.cut_out_ms {
            return 0.0;
        }
        let xs = &self.speeds_ms;
        let ys = &self.powers_kw;
        if ws <= xs[0] {
            return ys[0].clamp(0.0, self.capacity_kw);
        }
        let last = xs.len() - 1;
        if ws >= xs[last] {
            return ys[last].clamp(0.0, self.capacity_kw);
        }
        // first knot strictly greater than ws
        let hi = xs.partition_point(|&x| x <= ws);
        let lo = hi - 1;
        let frac = (ws - xs[lo]) / (xs[hi] - xs[lo]);
        (ys[lo] + frac * (ys[hi] - ys[lo])).clamp(0.0, self.capacity_kw)
    }
}

impl Default for PowerCurve {
    fn default() -> Self {
        Self::synthetic(3.0, 12.0, 25.0, crate::DEFAULT_CAPACITY_KW)
    }
}

/// Power in kW for wind speed `ws` under `curve`.
pub fn true_power(ws: f64, curve: &PowerCurve) -> Result<f64, CurveError> {
    curve.power(ws)
}
