//! Shared machinery for header-keyed delimited text.

use std::collections::HashMap;
use std::io::Read;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::Serialize;

use super::IngestError;
use crate::geo::GeoPoint;

/// A rejected input row. `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    pub line: u64,
    pub reason: String,
}

/// Parser output: accepted records plus every rejected row.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub errors: Vec<RowError>,
    /// Data rows read (records + errors).
    pub rows_in: usize,
}

impl<T> Parsed<T> {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

/// A required or optional column and the header spellings it accepts.
pub(crate) struct ColumnSpec {
    pub name: &'static str,
    pub aliases: &'static [&'static str],
    pub required: bool,
}

pub(crate) const fn required(name: &'static str, aliases: &'static [&'static str]) -> ColumnSpec {
    ColumnSpec { name, aliases, required: true }
}

pub(crate) const fn optional(name: &'static str, aliases: &'static [&'static str]) -> ColumnSpec {
    ColumnSpec { name, aliases, required: false }
}

fn normalize_header(raw: &[u8]) -> String {
    String::from_utf8_lossy(raw)
        .trim_start_matches('\u{feff}')
        .trim()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
}

/// Borrowed view of one data row.
pub(crate) struct Row<'a> {
    record: &'a csv::ByteRecord,
    positions: &'a HashMap<&'static str, usize>,
}

impl Row<'_> {
    /// Trimmed text of a column; empty when an optional column is absent.
    pub fn text(&self, column: &str) -> Result<&str, String> {
        let Some(&pos) = self.positions.get(column) else {
            return Ok("");
        };
        let raw = self.record.get(pos).unwrap_or_default();
        std::str::from_utf8(raw)
            .map(str::trim)
            .map_err(|_| format!("{column}: invalid UTF-8"))
    }

    pub fn non_empty(&self, column: &str) -> Result<&str, String> {
        let s = self.text(column)?;
        if s.is_empty() {
            Err(format!("{column}: missing value"))
        } else {
            Ok(s)
        }
    }

    pub fn f64(&self, column: &str) -> Result<f64, String> {
        let s = self.non_empty(column)?;
        let v: f64 = s.parse().map_err(|_| format!("{column}: not a number '{s}'"))?;
        if !v.is_finite() {
            return Err(format!("{column}: not finite"));
        }
        Ok(v)
    }

    pub fn i32(&self, column: &str) -> Result<i32, String> {
        let s = self.non_empty(column)?;
        s.parse().map_err(|_| format!("{column}: not an integer '{s}'"))
    }

    pub fn parse<T: std::str::FromStr<Err = String>>(&self, column: &str) -> Result<T, String> {
        self.non_empty(column)?.parse()
    }

    pub fn location(&self) -> Result<GeoPoint, String> {
        let lat = self.f64("latitude")?;
        let lon = self.f64("longitude")?;
        GeoPoint::new(lat, lon).map_err(|e| e.to_string())
    }
}

/// Reads a header-keyed table, mapping each data row through `on_row`.
///
/// Only I/O failures, an empty stream, and missing required columns fail
/// the whole file; everything else becomes a [`RowError`].
pub(crate) fn read_table<R, T, F>(
    input: R,
    dataset: &'static str,
    columns: &[ColumnSpec],
    mut on_row: F,
) -> Result<Parsed<T>, IngestError>
where
    R: Read,
    F: FnMut(&Row<'_>) -> Result<T, String>,
{
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let headers = reader.byte_headers().map_err(|e| csv_error(dataset, e))?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.iter().all(u8::is_ascii_whitespace)) {
        return Err(IngestError::EmptyInput { dataset });
    }
    let header_names: Vec<String> = headers.iter().map(normalize_header).collect();

    let mut positions = HashMap::new();
    let mut missing = Vec::new();
    for spec in columns {
        let found = std::iter::once(spec.name)
            .chain(spec.aliases.iter().copied())
            .find_map(|alias| header_names.iter().position(|h| h == alias));
        match found {
            Some(pos) => {
                positions.insert(spec.name, pos);
            }
            None if spec.required => missing.push(spec.name.to_string()),
            None => {}
        }
    }
    if !missing.is_empty() {
        return Err(IngestError::MissingColumns { dataset, columns: missing });
    }

    let mut parsed = Parsed { records: Vec::new(), errors: Vec::new(), rows_in: 0 };
    let mut record = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                parsed.rows_in += 1;
                let line = record.position().map_or(0, |p| p.line());
                if record.len() != headers.len() {
                    parsed.errors.push(RowError {
                        line,
                        reason: format!("expected {} fields, found {}", headers.len(), record.len()),
                    });
                    continue;
                }
                let row = Row { record: &record, positions: &positions };
                match on_row(&row) {
                    Ok(rec) => parsed.records.push(rec),
                    Err(reason) => parsed.errors.push(RowError { line, reason }),
                }
            }
            Err(e) if e.is_io_error() => return Err(csv_error(dataset, e)),
            Err(e) => {
                parsed.rows_in += 1;
                let line = e.position().map_or(0, |p| p.line());
                parsed.errors.push(RowError { line, reason: e.to_string() });
            }
        }
    }
    Ok(parsed)
}

fn csv_error(dataset: &'static str, e: csv::Error) -> IngestError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IngestError::Io { dataset, source: io },
        other => IngestError::Malformed { dataset, message: format!("{other:?}") },
    }
}

/// Accepts RFC 3339, `YYYY-MM-DD[ T]HH:MM:SS[.f]`, `MM/DD/YYYY HH:MM:SS AM`,
/// and bare dates. Zone-less inputs are taken as UTC.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&Utc));
    }
    const NAIVE: &[&str] = &[
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%m/%d/%Y %I:%M:%S %p",
        "%m/%d/%Y %H:%M:%S",
    ];
    for fmt in NAIVE {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(naive.and_utc());
        }
    }
    for fmt in ["%Y-%m-%d", "%m/%d/%Y"] {
        if let Ok(date) = NaiveDate::parse_from_str(s, fmt) {
            return Ok(date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc());
        }
    }
    Err(format!("unrecognized timestamp '{s}'"))
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)
}
