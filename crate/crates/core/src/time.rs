//! Timestamp helpers shared by the parsers, the generator and the sampler.

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Timelike, Utc};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

pub fn format_ts(t: DateTime<Utc>) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

/// Parses an ISO-8601 UTC timestamp. Accepts any RFC 3339 offset and
/// converts it to UTC.
pub fn parse_ts(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .ok()
        .map(|n| Utc.from_utc_datetime(&n))
}

/// Shifts a UTC instant by a fixed offset in hours and returns the
/// naive local wall-clock time.
pub fn local_time(t: DateTime<Utc>, tz_offset_hours: f64) -> chrono::NaiveDateTime {
    let minutes = (tz_offset_hours * 60.0).round() as i64;
    (t + Duration::minutes(minutes)).naive_utc()
}

/// Fractional local hour in [0, 24).
pub fn local_hour_fraction(t: DateTime<Utc>, tz_offset_hours: f64) -> f64 {
    let l = local_time(t, tz_offset_hours);
    l.hour() as f64 + l.minute() as f64 / 60.0 + l.second() as f64 / 3600.0
}

pub fn local_hour(t: DateTime<Utc>, tz_offset_hours: f64) -> u32 {
    local_time(t, tz_offset_hours).hour()
}

pub fn local_day_of_year(t: DateTime<Utc>, tz_offset_hours: f64) -> u32 {
    local_time(t, tz_offset_hours).ordinal()
}

pub fn local_month(t: DateTime<Utc>, tz_offset_hours: f64) -> u32 {
    local_time(t, tz_offset_hours).month()
}

pub fn utc_date(t: DateTime<Utc>) -> NaiveDate {
    t.date_naive()
}

pub fn days_in_month(year: i32, month: u32) -> u32 {
    let first = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month");
    let next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    }
    .expect("valid month");
    (next - first).num_days() as u32
}
