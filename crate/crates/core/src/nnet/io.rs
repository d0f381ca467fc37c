//! Model files: a JSON manifest plus a flat little-endian f64 blob.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{EpochRecord, TrainedModel};
use super::spec::ModelSpec;
use super::NnError;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Param,
    State,
}

/// A named run of values in the blob, offsets in f64 elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub kind: SegmentKind,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub n_params: usize,
    pub n_state: usize,
    pub segments: Vec<Segment>,
    pub frozen_layers: Vec<usize>,
    pub history: Vec<EpochRecord>,
    pub rng_seed: u64,
    #[serde(default)]
    pub bn_updates: u64,
    pub blob_sha256: String,
}

impl TrainedModel {
    /// Splits the model into its manifest and parameter blob.
    pub fn to_parts(&self) -> (ModelManifest, Vec<u8>) {
        let mut blob = Vec::with_capacity(8 * (self.params.len() + self.state.len()));
        for v in self.params.iter().chain(&self.state) {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let mut segments: Vec<Segment> = self
            .segments()
            .into_iter()
            .map(|(name, offset, len)| Segment {
                name,
                kind: SegmentKind::Param,
                offset,
                len,
            })
            .collect();
        for slot in &self.layout.slots {
            if slot.state_len > 0 {
                let c = slot.state_len / 2;
                let base = self.params.len() + slot.state_offset;
                for (k, part) in ["running_mean", "running_var"].iter().enumerate() {
                    segments.push(Segment {
                        name: format!("{}.batchnorm.{part}", slot.index),
                        kind: SegmentKind::State,
                        offset: base + k * c,
                        len: c,
                    });
                }
            }
        }
        let manifest = ModelManifest {
            format_version: MODEL_FORMAT_VERSION,
            spec: self.spec.clone(),
            n_params: self.params.len(),
            n_state: self.state.len(),
            segments,
            frozen_layers: self
                .frozen
                .iter()
                .enumerate()
                .filter_map(|(i, f)| f.then_some(i))
                .collect(),
            history: self.history.clone(),
            rng_seed: self.rng_seed,
            bn_updates: self.bn_updates,
            blob_sha256: hex::encode(Sha256::digest(&blob)),
        };
        (manifest, blob)
    }

    pub fn from_parts(manifest: &ModelManifest, blob: &[u8]) -> Result<Self, NnError> {
        if manifest.format_version != MODEL_FORMAT_VERSION {
            return Err(NnError::Format(format!(
                "unsupported model format version {}",
                manifest.format_version
            )));
        }
        if hex::encode(Sha256::digest(blob)) != manifest.blob_sha256 {
            return Err(NnError::Format("parameter blob checksum mismatch".into()));
        }
        let mut model = TrainedModel::zeros(&manifest.spec)?;
        if model.params.len() != manifest.n_params || model.state.len() != manifest.n_state {
            return Err(NnError::Format("parameter count does not match spec".into()));
        }
        if blob.len() != 8 * (manifest.n_params + manifest.n_state) {
            return Err(NnError::Format(format!("blob has {} bytes", blob.len())));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        model.params.copy_from_slice(&values[..manifest.n_params]);
        model.state.copy_from_slice(&values[manifest.n_params..]);
        for &i in &manifest.frozen_layers {
            *model
                .frozen
                .get_mut(i)
                .ok_or_else(|| NnError::Format(format!("frozen layer {i} out of range")))? = true;
        }
        model.history = manifest.history.clone();
        model.rng_seed = manifest.rng_seed;
        model.bn_updates = manifest.bn_updates;
        Ok(model)
    }
}
