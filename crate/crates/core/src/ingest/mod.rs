//! SCADA and NWP file parsing plus feature engineering.

mod features;
mod normalize;

pub use features::{adjust_hub_height, encode_features, FeatureVector, FEATURE_NAMES};
pub use normalize::{denormalize_power, Normalizer};

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{format_ts, parse_ts};

pub const SCADA_COLUMNS: [&str; 7] = [
    "turbine_id",
    "timestamp",
    "power_kw",
    "wind_speed_ms",
    "nacelle_dir_deg",
    "wind_dir_deg",
    "temp_c",
];

pub const NWP_COLUMNS: [&str; 8] = [
    "issue_time",
    "valid_time",
    "wind_speed_ms",
    "wind_gust_ms",
    "temp_c",
    "wind_dir_deg",
    "radiance_wm2",
    "precip_mm",
];

/// Longest lead time an NWP record may carry, in minutes.
pub const MAX_LEAD_MINUTES: i64 = 72 * 60;

/// Fraction of malformed rows tolerated before a parse fails outright.
pub const MAX_BAD_ROW_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScadaRecord {
    pub turbine_id: String,
    pub timestamp: DateTime<Utc>,
    pub power_kw: f64,
    pub wind_speed_ms: f64,
    pub nacelle_dir_deg: f64,
    pub wind_dir_deg: f64,
    pub temp_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NwpRecord {
    pub issue_time: DateTime<Utc>,
    pub valid_time: DateTime<Utc>,
    pub lead_minutes: i64,
    pub wind_speed_ms: f64,
    pub wind_gust_ms: f64,
    pub temp_c: f64,
    pub wind_dir_deg: f64,
    pub radiance: f64,
    pub precipitation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{bad} of {total} rows malformed (limit 10%); first offenders: {}", list_rows(.first))]
    TooManyBadRows {
        bad: usize,
        total: usize,
        first: Vec<RowError>,
    },
    #[error("hub height adjustment needs heights above 1 m (got nwp {h_nwp}, hub {h_hub})")]
    Domain { h_nwp: f64, h_hub: f64 },
    #[error("normalizer fit on empty training set")]
    EmptyFit,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn list_rows(rows: &[RowError]) -> String {
    rows.iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Records that parsed plus the rows that did not.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub rejected: Vec<RowError>,
}

fn column_index<R: Read>(
    reader: &mut csv::Reader<R>,
    expected: &[&str],
) -> Result<Vec<usize>, IngestError> {
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Schema(format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(IngestError::Schema("missing header row".into()));
    }
    let lookup: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();
    expected
        .iter()
        .map(|name| {
            lookup
                .get(name)
                .copied()
                .ok_or_else(|| IngestError::Schema(format!("missing column `{name}`")))
        })
        .collect()
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str) -> Result<&'a str, String> {
    rec.get(idx)
        .map(str::trim)
        .ok_or_else(|| format!("missing value for `{name}`"))
}

fn number(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<f64, String> {
    let raw = field(rec, idx, name)?;
    let v: f64 = raw
        .parse()
        .map_err(|_| format!("`{name}` is not a number: {raw:?}"))?;
    if !v.is_finite() {
        return Err(format!("`{name}` is not finite"));
    }
    Ok(v)
}

fn timestamp(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<DateTime<Utc>, String> {
    let raw = field(rec, idx, name)?;
    parse_ts(raw).ok_or_else(|| format!("unparseable timestamp in `{name}`: {raw:?}"))
}

fn finish<T>(records: Vec<T>, rejected: Vec<RowError>) -> Result<Parsed<T>, IngestError> {
    let total = records.len() + rejected.len();
    if total > 0 && rejected.len() as f64 > MAX_BAD_ROW_FRACTION * total as f64 {
        return Err(IngestError::TooManyBadRows {
            bad: rejected.len(),
            total,
            first: rejected.into_iter().take(20).collect(),
        });
    }
    Ok(Parsed { records, rejected })
}

fn csv_reader<R: Read>(stream: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(stream)
}

/// Parses a SCADA file. Output is sorted by `(turbine_id, timestamp)`;
/// duplicate timestamps within a turbine are rejected as row errors.
pub fn parse_scada<R: Read>(stream: R) -> Result<Parsed<ScadaRecord>, IngestError> {
    let mut reader = csv_reader(stream);
    let cols = column_index(&mut reader, &SCADA_COLUMNS)?;
    let mut records = Vec::new();
    let mut lines = Vec::new();
    let mut rejected = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parsed = (|| -> Result<ScadaRecord, String> {
            let turbine_id = field(&row, cols[0], "turbine_id")?.to_string();
            if turbine_id.is_empty() {
                return Err("empty turbine_id".into());
            }
            Ok(ScadaRecord {
                turbine_id,
                timestamp: timestamp(&row, cols[1], "timestamp")?,
                power_kw: number(&row, cols[2], "power_kw")?,
                wind_speed_ms: number(&row, cols[3], "wind_speed_ms")?,
                nacelle_dir_deg: number(&row, cols[4], "nacelle_dir_deg")?,
                wind_dir_deg: number(&row, cols[5], "wind_dir_deg")?,
                temp_c: number(&row, cols[6], "temp_c")?,
            })
        })();
        match parsed {
            Ok(r) => {
                records.push(r);
                lines.push(line);
            }
            Err(message) => rejected.push(RowError { line, message }),
        }
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        (&records[a].turbine_id, records[a].timestamp, lines[a])
            .cmp(&(&records[b].turbine_id, records[b].timestamp, lines[b]))
    });
    let mut sorted: Vec<ScadaRecord> = Vec::with_capacity(records.len());
    for i in order {
        let r = &records[i];
        if let Some(prev) = sorted.last() {
            if prev.turbine_id == r.turbine_id && prev.timestamp == r.timestamp {
                rejected.push(RowError {
                    line: lines[i],
                    message: format!(
                        "duplicate timestamp {} for turbine {}",
                        format_ts(r.timestamp),
                        r.turbine_id
                    ),
                });
                continue;
            }
        }
        sorted.push(r.clone());
    }
    rejected.sort_by_key(|e| e.line);
    finish(sorted, rejected)
}

/// Parses an NWP file. Output is sorted by `(issue_time, valid_time)`.
pub fn parse_nwp<R: Read>(stream: R) -> Result<Parsed<NwpRecord>, IngestError> {
    let mut reader = csv_reader(stream);
    let cols = column_index(&mut reader, &NWP_COLUMNS)?;
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parsed = (|| -> Result<NwpRecord, String> {
            let issue_time = timestamp(&row, cols[0], "issue_time")?;
            let valid_time = timestamp(&row, cols[1], "valid_time")?;
            let lead_minutes = (valid_time - issue_time).num_minutes();
            if !(0..=MAX_LEAD_MINUTES).contains(&lead_minutes) {
                return Err(format!("lead time {lead_minutes} min outside [0, 4320]"));
            }
            Ok(NwpRecord {
                issue_time,
                valid_time,
                lead_minutes,
                wind_speed_ms: number(&row, cols[2], "wind_speed_ms")?,
                wind_gust_ms: number(&row, cols[3], "wind_gust_ms")?,
                temp_c: number(&row, cols[4], "temp_c")?,
                wind_dir_deg: number(&row, cols[5], "wind_dir_deg")?,
                radiance: number(&row, cols[6], "radiance_wm2")?,
                precipitation: number(&row, cols[7], "precip_mm")?,
            })
        })();
        match parsed {
            Ok(r) => records.push(r),
            Err(message) => rejected.push(RowError { line, message }),
        }
    }
    records.sort_by_key(|r| (r.issue_time, r.valid_time));
    records.dedup_by_key(|r| (r.issue_time, r.valid_time));
    finish(records, rejected)
}

pub fn write_scada<W: Write>(out: W, records: &[ScadaRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCADA_COLUMNS)?;
    for r in records {
        w.write_record([
            r.turbine_id.clone(),
            format_ts(r.timestamp),
            r.power_kw.to_string(),
            r.wind_speed_ms.to_string(),
            r.nacelle_dir_deg.to_string(),
            r.wind_dir_deg.to_string(),
            r.temp_c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_nwp<W: Write>(out: W, records: &[NwpRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(NWP_COLUMNS)?;
    for r in records {
        w.write_record([
            format_ts(r.issue_time),
            format_ts(r.valid_time),
            r.wind_speed_ms.to_string(),
            r.wind_gust_ms.to_string(),
            r.temp_c.to_string(),
            r.wind_dir_deg.to_string(),
            r.radiance.to_string(),
            r.precipitation.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
