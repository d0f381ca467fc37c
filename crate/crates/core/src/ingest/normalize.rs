use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FeatureVector, IngestError, FEATURE_NAMES};
use crate::N_FEATURES;

/// Per-feature min/max scaling fit on training rows, plus the power scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormalizerFile", into = "NormalizerFile")]
pub struct Normalizer {
    pub mins: [f64; N_FEATURES],
    pub maxs: [f64; N_FEATURES],
    pub capacity_kw: f64,
}

#[derive(Serialize, Deserialize)]
struct FeatureRange {
    name: String,
    min: f64,
    max: f64,
}

#[derive(Serialize, Deserialize)]
struct NormalizerFile {
    features: Vec<FeatureRange>,
    capacity_kw: f64,
}

impl From<Normalizer> for NormalizerFile {
    fn from(n: Normalizer) -> Self {
        NormalizerFile {
            features: FEATURE_NAMES
                .iter()
                .enumerate()
                .map(|(i, name)| FeatureRange {
                    name: name.to_string(),
                    min: n.mins[i],
                    max: n.maxs[i],
                })
                .collect(),
            capacity_kw: n.capacity_kw,
        }
    }
}

impl TryFrom<NormalizerFile> for Normalizer {
    type Error = String;

    fn try_from(f: NormalizerFile) -> Result<Self, Self::Error> {
        if f.features.len() != N_FEATURES {
            return Err(format!("expected {N_FEATURES} features, got {}", f.features.len()));
        }
        let mut mins = [0.0; N_FEATURES];
        let mut maxs = [0.0; N_FEATURES];
        for (i, (range, name)) in f.features.iter().zip(FEATURE_NAMES).enumerate() {
            if range.name != name {
                return Err(format!("feature {i} is `{}`, expected `{name}`", range.name));
            }
            mins[i] = range.min;
            maxs[i] = range.max;
        }
        if !(f.capacity_kw > 0.0) {
            return Err("capacity_kw must be positive".into());
        }
        Ok(Normalizer {
            mins,
            maxs,
            capacity_kw: f.capacity_kw,
        })
    }
}

fn degenerate(min: f64, max: f64) -> bool {
    max - min <= 1e-12 * max.abs().max(1.0)
}

impl Normalizer {
    /// Fits min/max over training rows only.
    pub fn fit<'a, I>(train_rows: I, capacity_kw: f64) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut mins = [f64::INFINITY; N_FEATURES];
        let mut maxs = [f64::NEG_INFINITY; N_FEATURES];
        let mut seen = false;
        for row in train_rows {
            seen = true;
            for (j, &v) in row.iter().take(N_FEATURES).enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        if !seen {
            return Err(IngestError::EmptyFit);
        }
        Ok(Normalizer {
            mins,
            maxs,
            capacity_kw,
        })
    }

    /// Scales one feature; values outside the training range saturate.
    pub fn scale(&self, j: usize, v: f64) -> f64 {
        let (lo, hi) = (self.mins[j], self.maxs[j]);
        if degenerate(lo, hi) {
            return 0.5;
        }
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    pub fn unscale(&self, j: usize, y: f64) -> f64 {
        let (lo, hi) = (self.mins[j], self.maxs[j]);
        if degenerate(lo, hi) {
            return lo;
        }
        lo + y * (hi - lo)
    }

    pub fn apply(&self, fv: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; N_FEATURES];
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.scale(j, fv.0[j]);
        }
        FeatureVector(out)
    }

    /// Normalizes a row-major block of rows in place.
    pub fn apply_rows(&self, rows: &mut [f64]) {
        for row in rows.chunks_mut(N_FEATURES) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.scale(j, *v);
            }
        }
    }

    pub fn invert(&self, fv: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; N_FEATURES];
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.unscale(j, fv.0[j]);
        }
        FeatureVector(out)
    }

    pub fn normalize_power(&self, kw: f64) -> f64 {
        kw / self.capacity_kw
    }

    pub fn denormalize_power(&self, y: f64) -> f64 {
        (y * self.capacity_kw).clamp(0.0, self.capacity_kw)
    }

    /// Content hash of the serialized statistics; models record it so a
    /// forecaster is never fed features scaled by a different normalizer.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("normalizer serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Converts a normalized power prediction to kW, clamped to `[0, capacity]`.
pub fn denormalize_power(n: &Normalizer, y: f64) -> f64 {
    n.denormalize_power(y)
}
