//! Recording files: CSV with header `t,flow,abd,tho`, one row per sample.

use std::path::Path;

use breathtrace_core::locgp::Subject;
use breathtrace_core::TimeSeries;

use crate::error::{CliError, Result};

/// Relative deviation of a time step from the mean step that still counts
/// as uniform; absorbs rounding in printed timestamps.
const STEP_TOLERANCE: f64 = 1e-2;
/// Relative tolerance of the inferred rate against the configured one.
const RATE_TOLERANCE: f64 = 1e-3;

/// Subject id of a recording file: its file stem.
pub fn subject_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

pub(crate) fn csv_error(path: &Path, err: csv::Error) -> CliError {
    let line = err.position().map_or(0, |p| p.line() as usize);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => CliError::io(path, e),
        kind => CliError::Malformed {
            path: path.to_path_buf(),
            line,
            reason: format!("{kind:?}"),
        },
    }
}

/// Reads one recording. The flow column is optional; `t`, `abd` and `tho`
/// are required. The sampling rate inferred from `t` must match
/// `expected_hz` within 0.1%.
pub fn ingest_csv(path: &Path, expected_hz: f64) -> Result<Subject> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let require = |name: &'static str| {
        find(name).ok_or_else(|| CliError::MissingColumn {
            path: path.to_path_buf(),
            column: name,
        })
    };
    let t_col = require("t")?;
    let abd_col = require("abd")?;
    let tho_col = require("tho")?;
    let flow_col = find("flow");

    let mut t = Vec::new();
    let mut abd = Vec::new();
    let mut tho = Vec::new();
    let mut flow = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let cell = |col: usize| -> Result<f64> {
            let name = &header[col];
            let raw = record.get(col).unwrap_or("");
            let value: f64 = raw.parse().map_err(|_| {
                if raw.is_empty() {
                    CliError::NonFinite {
                        path: path.to_path_buf(),
                        line,
                        column: name.to_string(),
                    }
                } else {
                    CliError::Malformed {
                        path: path.to_path_buf(),
                        line,
                        reason: format!("`{raw}` in column `{name}` is not a number"),
                    }
                }
            })?;
            if !value.is_finite() {
                return Err(CliError::NonFinite {
                    path: path.to_path_buf(),
                    line,
                    column: name.to_string(),
                });
            }
            Ok(value)
        };
        t.push(cell(t_col)?);
        abd.push(cell(abd_col)?);
        tho.push(cell(tho_col)?);
        if let Some(c) = flow_col {
            flow.push(cell(c)?);
        }
    }
    if t.len() < 2 {
        return Err(CliError::Malformed {
            path: path.to_path_buf(),
            line: t.len() + 1,
            reason: "need at least two samples".into(),
        });
    }

    let mean_step = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    for (i, pair) in t.windows(2).enumerate() {
        let step = pair[1] - pair[0];
        if !(mean_step > 0.0 && step > 0.0 && (step - mean_step).abs() <= STEP_TOLERANCE * mean_step) {
            return Err(CliError::NonUniform {
                path: path.to_path_buf(),
                line: i + 3,
            });
        }
    }
    let file_hz = 1.0 / mean_step;
    if (file_hz - expected_hz).abs() > RATE_TOLERANCE * expected_hz {
        return Err(CliError::RateMismatch {
            path: path.to_path_buf(),
            file_hz,
            config_hz: expected_hz,
        });
    }

    let series = |v: Vec<f64>| TimeSeries::new(v, expected_hz, t[0]).map_err(CliError::Numeric);
    let flow = match flow_col {
        Some(_) => Some(series(flow)?),
        None => None,
    };
    Subject::new(subject_id(path), flow, series(abd)?, series(tho)?).map_err(CliError::Numeric)
}

/// Writes a recording in the format [`ingest_csv`] reads.
pub fn write_recording(path: &Path, subject: &Subject) -> Result<()> {
    let mut writer = csv_writer(path)?;
    let with_flow = subject.flow.is_some();
    let header: &[&str] = if with_flow { &["t", "flow", "abd", "tho"] } else { &["t", "abd", "tho"] };
    writer.write_record(header).map_err(|e| csv_error(path, e))?;
    for i in 0..subject.abd.len() {
        let mut row = vec![subject.abd.time(i).to_string()];
        if let Some(flow) = &subject.flow {
            row.push(flow.samples()[i].to_string());
        }
        row.push(subject.abd.samples()[i].to_string());
        row.push(subject.tho.samples()[i].to_string());
        writer.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}
