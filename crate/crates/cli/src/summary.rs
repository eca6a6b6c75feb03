//! The run summary written next to every command's outputs.

use std::fs;
use std::path::Path;

use breathtrace_core::eval::median;
use breathtrace_core::locgp::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::config::config_hash;
use crate::error::{CliError, Result};
use crate::table::MetricRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub breathtrace: String,
    pub breathtrace_core: String,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            breathtrace: env!("CARGO_PKG_VERSION").into(),
            breathtrace_core: breathtrace_core::VERSION.into(),
        }
    }
}

/// Lower medians over scored windows; `None` when nothing was scored.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Medians {
    pub rmse_reduction: Option<f64>,
    pub diff_rmse_reduction: Option<f64>,
    pub coverage: Option<f64>,
}

impl Medians {
    pub fn of<'a>(rows: impl IntoIterator<Item = &'a MetricRow> + Clone) -> Self {
        let pick = |f: fn(&MetricRow) -> Option<f64>| median(&rows.clone().into_iter().filter_map(f).collect::<Vec<_>>());
        Medians {
            rmse_reduction: pick(|r| r.rmse_reduction),
            diff_rmse_reduction: pick(|r| r.diff_rmse_reduction),
            coverage: pick(|r| Some(r.coverage)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub id: String,
    pub samples: usize,
    /// Seed the subject was generated from (`synth` only).
    pub seed: Option<u64>,
    pub predicted_windows: Option<usize>,
    pub skipped_windows: Option<usize>,
    pub scored_windows: Option<usize>,
    /// Global shift applied before scoring, samples.
    pub alignment_lag_samples: Option<isize>,
    pub medians: Option<Medians>,
}

impl SubjectSummary {
    pub fn new(id: &str, samples: usize) -> Self {
        SubjectSummary {
            id: id.to_string(),
            samples,
            seed: None,
            predicted_windows: None,
            skipped_windows: None,
            scored_windows: None,
            alignment_lag_samples: None,
            medians: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub versions: Versions,
    pub config_sha256: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub subjects: Vec<SubjectSummary>,
    pub medians: Option<Medians>,
}

impl Summary {
    pub fn new(command: &str, cfg: &PipelineConfig) -> Self {
        Summary {
            command: command.to_string(),
            versions: Versions::default(),
            config_sha256: config_hash(cfg),
            seed: cfg.seed,
            config: cfg.clone(),
            subjects: Vec::new(),
            medians: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("summary serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Malformed {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }
}
