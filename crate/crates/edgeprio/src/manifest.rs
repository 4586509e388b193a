//! Workload manifests: one CSV row per document.
//!
//! ```text
//! index,path,original_size,processed_size,cpu_cost,arrival_time
//! 0,scans/img_0000.png,2000000,1400000,1.8,0
//! ```
//!
//! Exported workloads add a trailing `ratio` column with the ground-truth
//! CPU-normalized reduction; readers ignore it.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use edgeprio_core::workload::{Workload, WorkloadDoc, WorkloadError};
use serde::Deserialize;
use thiserror::Error;

pub const COLUMNS: [&str; 6] = [
    "index",
    "path",
    "original_size",
    "processed_size",
    "cpu_cost",
    "arrival_time",
];

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: invalid {field}")]
    InvariantViolation { line: u64, field: &'static str },
    #[error("manifest has no rows")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ManifestRow {
    pub index: u32,
    pub path: String,
    pub original_size: u64,
    pub processed_size: u64,
    pub cpu_cost: f64,
    pub arrival_time: f64,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Workload, ManifestError> {
    read_manifest(File::open(path)?).map(|(w, _)| w)
}

/// Parses and validates a manifest, returning the workload and the raw rows.
pub fn read_manifest<R: Read>(reader: R) -> Result<(Workload, Vec<ManifestRow>), ManifestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_error(&e, 1))?.clone();
    for col in COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(ManifestError::Parse {
                line: 1,
                message: format!("missing column `{col}`"),
            });
        }
    }

    let mut rows = Vec::new();
    let mut docs = Vec::new();
    for (i, record) in rdr.deserialize::<ManifestRow>().enumerate() {
        let line = i as u64 + 2;
        let row = record.map_err(|e| parse_error(&e, line))?;
        check_row(&row, docs.len(), docs.last(), line)?;
        docs.push(WorkloadDoc {
            index: row.index,
            arrival_time: row.arrival_time,
            original_size: row.original_size,
            processed_size: row.processed_size,
            cpu_cost: row.cpu_cost,
        });
        rows.push(row);
    }
    if docs.is_empty() {
        return Err(ManifestError::Empty);
    }
    let workload = Workload::new(docs).map_err(|e| match e {
        WorkloadError::InvariantViolation { index, field } => ManifestError::InvariantViolation {
            line: index as u64 + 2,
            field,
        },
        _ => ManifestError::Empty,
    })?;
    Ok((workload, rows))
}

fn parse_error(e: &csv::Error, fallback: u64) -> ManifestError {
    let line = e.position().map_or(fallback, csv::Position::line);
    let message = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    };
    ManifestError::Parse { line, message }
}

fn check_row(
    row: &ManifestRow,
    expected: usize,
    prev: Option<&WorkloadDoc>,
    line: u64,
) -> Result<(), ManifestError> {
    let bad = |field| Err(ManifestError::InvariantViolation { line, field });
    if row.index as usize != expected {
        return bad("index");
    }
    if row.original_size == 0 {
        return bad("original_size");
    }
    if row.processed_size == 0 || row.processed_size > row.original_size {
        return bad("processed_size");
    }
    if !(row.cpu_cost > 0.0) || !row.cpu_cost.is_finite() {
        return bad("cpu_cost");
    }
    if !row.arrival_time.is_finite() || prev.is_some_and(|p| row.arrival_time < p.arrival_time) {
        return bad("arrival_time");
    }
    Ok(())
}

/// Writes `workload` as a manifest with the extra `ratio` column. `paths`
/// supplies the `path` column; synthetic documents get `doc_{index}`.
pub fn write_workload<W: Write>(
    writer: W,
    workload: &Workload,
    paths: Option<&[String]>,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = COLUMNS.to_vec();
    header.push("ratio");
    w.write_record(&header)?;
    for (i, d) in workload.docs().iter().enumerate() {
        let path = paths
            .and_then(|p| p.get(i).cloned())
            .unwrap_or_else(|| format!("doc_{}", d.index));
        w.write_record([
            d.index.to_string(),
            path,
            d.original_size.to_string(),
            d.processed_size.to_string(),
            d.cpu_cost.to_string(),
            d.arrival_time.to_string(),
            d.true_ratio().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
