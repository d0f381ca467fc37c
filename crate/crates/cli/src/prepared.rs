//! On-disk layout of a prepared dataset directory.
//!
//! ```text
//! site.json              context, capacity and power curve
//! split.json             day map and per-turbine sample indices
//! samples_<id>.csv       one row per sample step
//! normalizer_<id>.json   fit on that turbine's training samples
//! manifest.json
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use windcorr::ingest::Normalizer;
use windcorr::sampler::{read_samples, write_samples, DatasetSplit, DayAssignment, PreparedFarm, PreparedTurbine};

use crate::config::{self, SiteConfig};
use crate::error::{CliError, Result};
use crate::manifest::verify_outputs;

pub const SITE_FILE: &str = "site.json";
pub const SPLIT_FILE: &str = "split.json";

pub fn samples_file(id: &str) -> String {
    format!("samples_{id}.csv")
}

pub fn normalizer_file(id: &str) -> String {
    format!("normalizer_{id}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TurbineSplit {
    #[serde(flatten)]
    split: DatasetSplit,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitFile {
    days: DayAssignment,
    turbines: BTreeMap<String, TurbineSplit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub site: SiteConfig,
    pub farm: PreparedFarm,
}

impl Prepared {
    pub fn turbine(&self, id: &str) -> Result<&PreparedTurbine> {
        self.farm
            .turbines
            .get(id)
            .ok_or_else(|| CliError::missing(format!("turbine {id} is not in the prepared data")))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("serializes");
    fs::write(path, json + "\n").map_err(|e| CliError::write(path, e))
}

/// Writes everything but the manifest.
pub fn write(dir: &Path, prepared: &Prepared) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    config::write(&dir.join(SITE_FILE), &prepared.site)?;
    let split = SplitFile {
        days: prepared.farm.days.clone(),
        turbines: prepared
            .farm
            .turbines
            .iter()
            .map(|(id, t)| {
                (
                    id.clone(),
                    TurbineSplit {
                        split: t.split.clone(),
                        warnings: t.warnings.clone(),
                    },
                )
            })
            .collect(),
    };
    write_json(&dir.join(SPLIT_FILE), &split)?;
    for (id, t) in &prepared.farm.turbines {
        let path = dir.join(samples_file(id));
        let f = File::create(&path).map_err(|e| CliError::write(&path, e))?;
        write_samples(BufWriter::new(f), &t.samples)?;
        write_json(&dir.join(normalizer_file(id)), &t.normalizer)?;
    }
    Ok(())
}

/// Loads a prepared directory after checking it against its manifest.
pub fn load(dir: &Path) -> Result<Prepared> {
    verify_outputs(dir)?;
    let site: SiteConfig = config::load(&dir.join(SITE_FILE))?;
    let path = dir.join(SPLIT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::read(&path, e))?;
    let split: SplitFile =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut turbines = BTreeMap::new();
    for (id, ts) in split.turbines {
        let path = dir.join(samples_file(&id));
        let f = File::open(&path).map_err(|e| CliError::read(&path, e))?;
        let samples = read_samples(BufReader::new(f))?;
        let n = samples.len();
        if [&ts.split.train, &ts.split.validation, &ts.split.test]
            .iter()
            .any(|idx| idx.iter().any(|&i| i >= n))
        {
            return Err(CliError::data(format!("split indices for {id} exceed its {n} samples")));
        }
        let path = dir.join(normalizer_file(&id));
        let text = fs::read_to_string(&path).map_err(|e| CliError::read(&path, e))?;
        let normalizer: Normalizer =
            serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        turbines.insert(
            id,
            PreparedTurbine {
                samples,
                split: ts.split,
                normalizer,
                warnings: ts.warnings,
            },
        );
    }
    Ok(Prepared {
        site,
        farm: PreparedFarm {
            days: split.days,
            turbines,
        },
    })
}
