//! Comparison tables as CSV and JSON.

use std::path::Path;

use serde::Serialize;

use super::{Report, SweepRow};
use crate::error::Result;
use crate::fsutil::atomic_write;

/// Column set of the accuracy comparison table.
pub const TABLE_HEADER: [&str; 5] = ["Method", "Wasserstein dist.", "Mean error", "Std. dev. error", "NIRMSE"];

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| crate::error::Error::InvalidInput(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| crate::error::Error::InvalidInput(e.to_string()))
}

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Accuracy table with `TABLE_HEADER` columns, one row per report.
pub fn table_csv(reports: &[Report]) -> Result<Vec<u8>> {
    let rows = reports.iter().map(|r| {
        vec![r.method.clone(), sci(r.wasserstein), sci(r.mean_error), sci(r.std_error), sci(r.nirmse)]
    });
    csv_bytes(&TABLE_HEADER, rows)
}

/// Sweep rows as `label,bins,msi,nirmse,wasserstein,error`.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let opt = |v: Option<f64>| v.map(sci).unwrap_or_default();
    let body = rows.iter().map(|r| {
        vec![
            r.label.clone(),
            r.bins.map(|b| b.to_string()).unwrap_or_default(),
            opt(r.msi),
            opt(r.nirmse),
            opt(r.wasserstein),
            r.error.clone().unwrap_or_default(),
        ]
    });
    csv_bytes(&["label", "bins", "msi", "nirmse", "wasserstein", "error"], body)
}

/// Writes `<stem>.csv` or `<stem>.json` for each requested format.
pub fn write_table(stem: &Path, reports: &[Report], formats: &[Format]) -> Result<()> {
    for f in formats {
        match f {
            Format::Csv => atomic_write(&stem.with_extension("csv"), &table_csv(reports)?)?,
            Format::Json => write_json(&stem.with_extension("json"), reports)?,
        }
    }
    Ok(())
}

pub fn write_sweep(stem: &Path, rows: &[SweepRow], formats: &[Format]) -> Result<()> {
    for f in formats {
        match f {
            Format::Csv => atomic_write(&stem.with_extension("csv"), &sweep_csv(rows)?)?,
            Format::Json => write_json(&stem.with_extension("json"), rows)?,
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(value)?.as_bytes())
}
