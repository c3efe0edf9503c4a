//! CSV ingestion and cleaning for daily index prices.
//!
//! Vendor price files are rarely clean: unparseable or mixed-format dates,
//! `NaN`/empty/non-positive closes, duplicated dates, rows out of order.
//! [`parse_csv`] reads the file without judging it; [`clean`] filters and
//! repairs the raw records into a validated [`PriceSeries`] and reports
//! exactly what it dropped or rewrote.
//!
//! Cleaning rules:
//! 1. Rows with an unparseable date or a non-finite/non-positive close are
//!    dropped (counted under `rows_dropped_nan`).
//! 2. Duplicate dates keep the first occurrence in file order.
//! 3. Dates are normalized to ISO-8601; accepted input formats are
//!    `YYYY-MM-DD`, `MM/DD/YYYY`, and `DD-Mon-YYYY`.
//! 4. Output is sorted ascending by date.

use std::collections::HashSet;
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("required column not found in header: {0}")]
    MissingColumn(String),
    #[error("no data rows in {0}")]
    EmptyFile(PathBuf),
    #[error("cleaning left fewer than two valid observations")]
    AllRowsInvalid,
    #[error("price series invariant violated: {0}")]
    InvalidSeries(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// One row of a raw price file, before any validation.
///
/// Invalid fields are preserved as `None` so the cleaner can count them.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    /// Parsed date, or `None` when the text did not match any accepted format.
    pub date: Option<NaiveDate>,
    /// True when the date parsed but was not ISO-8601 in the file.
    pub date_reformatted: bool,
    /// Original date text, kept for diagnostics.
    pub raw_date: String,
    /// Close price; `None` when non-numeric. May be non-finite (`NaN` text).
    pub close: Option<f64>,
    /// 1-based line number in the source file (header is line 1).
    pub source_line: usize,
}

impl RawRecord {
    /// A record is valid when its date parsed and its close is a finite,
    /// strictly positive number.
    pub fn is_valid(&self) -> bool {
        self.date.is_some() && matches!(self.close, Some(c) if c.is_finite() && c > 0.0)
    }
}

/// A validated, ordered daily price series for one index.
///
/// Invariants enforced at construction: dates strictly increasing, every
/// close finite and strictly positive, at least one observation. [`clean`]
/// additionally guarantees at least two observations for ingested data.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    index_name: String,
    observations: Vec<(NaiveDate, f64)>,
}

impl PriceSeries {
    pub fn new(
        index_name: impl Into<String>,
        observations: Vec<(NaiveDate, f64)>,
    ) -> Result<Self, IngestError> {
        if observations.is_empty() {
            return Err(IngestError::InvalidSeries("empty series".into()));
        }
        for window in observations.windows(2) {
            if window[0].0 >= window[1].0 {
                return Err(IngestError::InvalidSeries(format!(
                    "dates not strictly increasing at {}",
                    window[1].0
                )));
            }
        }
        for (date, close) in &observations {
            if !close.is_finite() || *close <= 0.0 {
                return Err(IngestError::InvalidSeries(format!(
                    "non-finite or non-positive close {close} at {date}"
                )));
            }
        }
        Ok(Self {
            index_name: index_name.into(),
            observations,
        })
    }

    pub fn index_name(&self) -> &str {
        &self.index_name
    }

    pub fn observations(&self) -> &[(NaiveDate, f64)] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.observations.iter().map(|(_, c)| *c).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.observations.iter().map(|(d, _)| *d).collect()
    }

    pub fn first_date(&self) -> NaiveDate {
        self.observations[0].0
    }

    pub fn last_date(&self) -> NaiveDate {
        self.observations[self.observations.len() - 1].0
    }
}

/// What [`clean`] did to the raw records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub rows_read: usize,
    /// Rows dropped for any invalid field: unparseable date, non-finite
    /// (NaN) close, or non-positive close.
    pub rows_dropped_nan: usize,
    pub rows_dropped_duplicate_date: usize,
    /// Kept rows whose date was rewritten from a non-ISO format.
    pub rows_date_reformatted: usize,
}

/// Column-name overrides for [`parse_csv_with`]. `None` auto-detects.
#[derive(Debug, Clone, Default)]
pub struct CsvColumns {
    pub date: Option<String>,
    pub close: Option<String>,
}

/// Parse a raw CSV price file into records, one per data row, in file order.
///
/// The header must contain a date column and a close column
/// (case-insensitive `date` and `close`/`adj close` by default). Invalid
/// field values are preserved as markers for [`clean`], not rejected here.
pub fn parse_csv(path: impl AsRef<Path>, index_name: &str) -> Result<Vec<RawRecord>, IngestError> {
    parse_csv_with(path, index_name, &CsvColumns::default())
}

/// [`parse_csv`] with explicit column names.
pub fn parse_csv_with(
    path: impl AsRef<Path>,
    _index_name: &str,
    columns: &CsvColumns,
) -> Result<Vec<RawRecord>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            IngestError::MissingFile(path.to_path_buf())
        } else {
            IngestError::Io(e)
        }
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let headers = match reader.headers() {
        Ok(h) if !h.is_empty() => h.clone(),
        _ => return Err(IngestError::EmptyFile(path.to_path_buf())),
    };

    let date_col = find_column(&headers, columns.date.as_deref(), &["date"])
        .ok_or_else(|| IngestError::MissingColumn(columns.date.clone().unwrap_or_else(|| "date".into())))?;
    let close_col = find_column(
        &headers,
        columns.close.as_deref(),
        &["close", "adj close", "adj_close", "adjclose"],
    )
    .ok_or_else(|| IngestError::MissingColumn(columns.close.clone().unwrap_or_else(|| "close".into())))?;

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let raw_date = row.get(date_col).unwrap_or("").trim().to_string();
        let (date, date_reformatted) = match parse_date(&raw_date) {
            Some((d, reformatted)) => (Some(d), reformatted),
            None => (None, false),
        };
        let close = parse_close(row.get(close_col).unwrap_or(""));
        records.push(RawRecord {
            date,
            date_reformatted,
            raw_date,
            close,
            source_line: i + 2, // line 1 is the header
        });
    }

    if records.is_empty() {
        return Err(IngestError::EmptyFile(path.to_path_buf()));
    }
    Ok(records)
}

fn find_column(headers: &csv::StringRecord, explicit: Option<&str>, defaults: &[&str]) -> Option<usize> {
    let matches_name = |field: &str, name: &str| field.trim().eq_ignore_ascii_case(name);
    if let Some(name) = explicit {
        return headers.iter().position(|f| matches_name(f, name));
    }
    for name in defaults {
        if let Some(idx) = headers.iter().position(|f| matches_name(f, name)) {
            return Some(idx);
        }
    }
    None
}

fn parse_date(text: &str) -> Option<(NaiveDate, bool)> {
    let t = text.trim();
    if let Ok(d) = NaiveDate::parse_from_str(t, "%Y-%m-%d") {
        return Some((d, false));
    }
    for fmt in ["%m/%d/%Y", "%d-%b-%Y"] {
        if let Ok(d) = NaiveDate::parse_from_str(t, fmt) {
            return Some((d, true));
        }
    }
    None
}

fn parse_close(text: &str) -> Option<f64> {
    let t = text.trim().replace(',', ""); // tolerate thousands separators
    if t.is_empty() {
        return None;
    }
    t.parse::<f64>().ok()
}

/// Clean raw records into a validated series plus a reconciliation report.
///
/// Duplicate dates keep the first occurrence in record order; invalid rows
/// are dropped and counted; the output is sorted ascending by date.
/// `rows_read = output length + rows_dropped_nan + rows_dropped_duplicate_date`
/// always holds (reformatted rows are not drops).
pub fn clean(index_name: &str, records: &[RawRecord]) -> Result<(PriceSeries, CleaningReport), IngestError> {
    let mut report = CleaningReport {
        rows_read: records.len(),
        ..CleaningReport::default()
    };

    let mut seen = HashSet::new();
    let mut kept: Vec<(NaiveDate, f64, bool)> = Vec::with_capacity(records.len());
    for record in records {
        let (date, close) = match (record.date, record.close) {
            (Some(d), Some(c)) if c.is_finite() && c > 0.0 => (d, c),
            _ => {
                report.rows_dropped_nan += 1;
                continue;
            }
        };
        if !seen.insert(date) {
            report.rows_dropped_duplicate_date += 1;
            continue;
        }
        kept.push((date, close, record.date_reformatted));
    }

    if kept.len() < 2 {
        return Err(IngestError::AllRowsInvalid);
    }

    report.rows_date_reformatted = kept.iter().filter(|(_, _, r)| *r).count();
    kept.sort_by_key(|(date, _, _)| *date);

    let series = PriceSeries::new(index_name, kept.into_iter().map(|(d, c, _)| (d, c)).collect())?;
    Ok((series, report))
}

/// Re-express a series as raw records, e.g. to feed [`clean`] again.
pub fn series_as_records(series: &PriceSeries) -> Vec<RawRecord> {
    series
        .observations()
        .iter()
        .enumerate()
        .map(|(i, (date, close))| RawRecord {
            date: Some(*date),
            date_reformatted: false,
            raw_date: date.to_string(),
            close: Some(*close),
            source_line: i + 2,
        })
        .collect()
}
