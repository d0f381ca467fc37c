//! Versioned JSON config files. Every file carries `schema_version`; values
//! given on the command line override the file, which overrides defaults.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use windcorr::continual::FinetuneConfig;
use windcorr::curve::PowerCurve;
use windcorr::datagen::{BiasProfile, FarmConfig, RegimeShift};
use windcorr::models::{ModelConfig, SearchSpace};
use windcorr::sampler::SampleContext;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Input of `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub schema_version: u32,
    pub farm: FarmConfig,
    pub bias: BiasProfile,
    pub shift: Option<RegimeShift>,
    /// Defaults to a synthetic curve with cut-in 3, rated 12, cut-out 25 m/s.
    pub curve: Option<PowerCurve>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            farm: FarmConfig::default(),
            bias: BiasProfile::default(),
            shift: None,
            curve: None,
        }
    }
}

/// Physical site description used by `prepare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiteConfig {
    pub schema_version: u32,
    pub context: SampleContext,
    pub capacity_kw: f64,
    pub curve: PowerCurve,
}

impl Default for SiteConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            context: SampleContext::default(),
            capacity_kw: windcorr::DEFAULT_CAPACITY_KW,
            curve: PowerCurve::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfigFile {
    pub schema_version: u32,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfigFile {
    pub schema_version: u32,
    pub finetune: FinetuneConfig,
}

impl Default for FinetuneConfigFile {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            finetune: FinetuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpaceFile {
    pub schema_version: u32,
    pub space: SearchSpace,
}

/// Reads a config file, rejecting unknown schema versions.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    let bad = |e: serde_json::Error| CliError::config(format!("{}: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(CliError::config(format!(
                "{}: schema_version {v} is not supported (expected {SCHEMA_VERSION})",
                path.display()
            )))
        }
        None => return Err(CliError::config(format!("{}: missing schema_version", path.display()))),
    }
    serde_json::from_value(value).map_err(bad)
}

pub fn write<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("config serializes");
    fs::write(path, json + "\n").map_err(|e| CliError::write(path, e))
}
