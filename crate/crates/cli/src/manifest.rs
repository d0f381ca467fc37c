//! Run manifests: one per output directory, recording what produced it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub toolkit_version: String,
    /// sha256 of the config file, if one was given.
    pub config_hash: Option<String>,
    /// sha256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every file written, keyed by path relative to the output dir.
    pub outputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub started_at: String,
    pub finished_at: String,
    /// Command-specific settings in effect, after flags and files are merged.
    pub settings: serde_json::Value,
    pub notes: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::read(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Every regular file under `dir`, sorted, except manifests.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| CliError::read(&d, e))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::read(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Collects the pieces of a manifest while a command runs.
#[derive(Debug)]
pub struct ManifestBuilder {
    command: String,
    started: DateTime<Utc>,
    config_hash: Option<String>,
    inputs: BTreeMap<String, String>,
    seeds: BTreeMap<String, u64>,
    settings: serde_json::Value,
    notes: Vec<String>,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Utc::now(),
            config_hash: None,
            inputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            settings: serde_json::Value::Null,
            notes: Vec::new(),
        }
    }

    pub fn config(&mut self, path: &Path) -> Result<()> {
        self.config_hash = Some(sha256_file(path)?);
        self.input(path)
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    /// Records every file under `dir`, including its manifest.
    pub fn input_dir(&mut self, dir: &Path) -> Result<()> {
        for f in list_files(dir)? {
            self.input(&f)?;
        }
        let m = dir.join(MANIFEST_FILE);
        if m.exists() {
            self.input(&m)?;
        }
        Ok(())
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn settings<T: Serialize>(&mut self, value: &T) {
        self.settings = serde_json::to_value(value).expect("settings serialize");
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// Hashes everything in `out_dir` and writes the manifest there.
    pub fn finish(self, out_dir: &Path) -> Result<RunManifest> {
        let mut outputs = BTreeMap::new();
        for f in list_files(out_dir)? {
            let rel = f.strip_prefix(out_dir).expect("listed under out dir");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            outputs.insert(key, sha256_file(&f)?);
        }
        let manifest = RunManifest {
            schema_version: MANIFEST_SCHEMA,
            command: self.command,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config_hash,
            inputs: self.inputs,
            outputs,
            seeds: self.seeds,
            started_at: self.started.to_rfc3339_opts(SecondsFormat::Secs, true),
            finished_at: now(),
            settings: self.settings,
            notes: self.notes,
        };
        let path = out_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| CliError::write(&path, e))?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::read(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::integrity(format!("{}: {e}", path.display())))
}

/// Fails unless every output recorded in `dir`'s manifest is present and
/// unchanged.
pub fn verify_outputs(dir: &Path) -> Result<RunManifest> {
    let m = read_manifest(dir)?;
    for (rel, hash) in &m.outputs {
        let path = dir.join(rel);
        let actual = sha256_file(&path)?;
        if &actual != hash {
            return Err(CliError::integrity(format!(
                "{} does not match its manifest hash",
                path.display()
            )));
        }
    }
    Ok(m)
}
