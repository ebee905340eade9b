//! Timestamp helpers shared by the file formats.

use chrono::{DateTime, FixedOffset, NaiveDate, SecondsFormat, TimeZone, Utc};

use crate::error::{Error, Result};

/// Formats an instant as RFC 3339 UTC with second precision (`2018-01-04T16:57:52Z`).
pub fn format_utc(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Parses an RFC 3339 timestamp, converting to UTC and truncating sub-second parts.
pub fn parse_utc(s: &str) -> Result<DateTime<Utc>> {
    let t = DateTime::parse_from_rfc3339(s.trim())
        .map_err(|e| Error::invalid(format!("bad timestamp {s:?}: {e}")))?;
    let secs = t.timestamp();
    Ok(Utc.timestamp_opt(secs, 0).single().expect("in-range timestamp"))
}

/// Fixed UTC offset from whole hours; day boundaries are computed in this zone.
pub fn offset_hours(hours: i32) -> Result<FixedOffset> {
    FixedOffset::east_opt(hours * 3600)
        .ok_or_else(|| Error::invalid(format!("timezone offset {hours}h out of range")))
}

/// Local calendar day of an instant.
pub fn local_day(t: &DateTime<Utc>, tz: &FixedOffset) -> NaiveDate {
    t.with_timezone(tz).date_naive()
}

/// The UTC instant of local midnight starting `day`.
pub fn day_start(day: NaiveDate, tz: &FixedOffset) -> DateTime<Utc> {
    let local = day.and_hms_opt(0, 0, 0).expect("midnight exists");
    tz.from_local_datetime(&local)
        .single()
        .expect("fixed offsets are unambiguous")
        .with_timezone(&Utc)
}
