//! Numeric CSV tables (predictions, harmonics, features) and the per-window
//! metrics file. Floats are written in shortest round-trip form, so every
//! file reads back bit-exactly.

use std::path::Path;

use breathtrace_core::eval::WindowMetrics;
use serde::{Deserialize, Serialize};

use crate::data::{csv_error, csv_writer};
use crate::error::{CliError, Result};

/// Named columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>, columns: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(header.len(), columns.len());
        Table { header, columns }
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header.iter().position(|h| h == name).map(|i| self.columns[i].as_slice())
    }
}

pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    let mut writer = csv_writer(path)?;
    writer.write_record(&table.header).map_err(|e| csv_error(path, e))?;
    for r in 0..table.rows() {
        writer
            .write_record(table.columns.iter().map(|c| c[r].to_string()))
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a table written by [`write_table`]; `NaN` cells are allowed.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    let mut columns = vec![Vec::new(); header.len()];
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for (c, raw) in record.iter().enumerate() {
            let value = raw.parse().map_err(|_| CliError::Malformed {
                path: path.to_path_buf(),
                line,
                reason: format!("`{raw}` is not a number"),
            })?;
            columns[c].push(value);
        }
    }
    Ok(Table { header, columns })
}

/// Per-sample predictions `t,mean,sd`; NaN where nothing was predicted.
pub fn prediction_table(t0: f64, fs: f64, mean: &[f64], sd: &[f64]) -> Table {
    let t = (0..mean.len()).map(|i| t0 + i as f64 / fs).collect();
    Table::new(
        vec!["t".into(), "mean".into(), "sd".into()],
        vec![t, mean.to_vec(), sd.to_vec()],
    )
}

pub fn read_predictions(path: &Path) -> Result<Table> {
    let table = read_table(path)?;
    for column in ["t", "mean", "sd"] {
        if table.column(column).is_none() {
            return Err(CliError::MissingColumn {
                path: path.to_path_buf(),
                column,
            });
        }
    }
    Ok(table)
}

/// One row of `metrics.csv`. Missing reductions (silent windows) are empty
/// cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub subject: String,
    pub window: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub rmse_reduction: Option<f64>,
    pub diff_rmse_reduction: Option<f64>,
    pub coverage: f64,
    pub n_samples: usize,
    pub alignment_lag_s: f64,
}

impl MetricRow {
    pub fn new(subject: &str, w: &WindowMetrics) -> Self {
        MetricRow {
            subject: subject.to_string(),
            window: w.window,
            t_start: w.t_start,
            t_end: w.t_end,
            rmse_reduction: w.rmse_reduction,
            diff_rmse_reduction: w.diff_rmse_reduction,
            coverage: w.coverage,
            n_samples: w.n_samples,
            alignment_lag_s: w.alignment_lag_s,
        }
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut writer = csv_writer(path)?;
    writer
        .write_record([
            "subject",
            "window",
            "t_start",
            "t_end",
            "rmse_reduction",
            "diff_rmse_reduction",
            "coverage",
            "n_samples",
            "alignment_lag_s",
        ])
        .map_err(|e| csv_error(path, e))?;
    let optional = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        writer
            .write_record([
                r.subject.clone(),
                r.window.to_string(),
                r.t_start.to_string(),
                r.t_end.to_string(),
                optional(r.rmse_reduction),
                optional(r.diff_rmse_reduction),
                r.coverage.to_string(),
                r.n_samples.to_string(),
                r.alignment_lag_s.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}
