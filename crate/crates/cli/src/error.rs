use std::path::{Path, PathBuf};

use serde_json::json;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot parse config {path}: {reason}")]
    ConfigParse { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(breathtrace_core::Error),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: &'static str },

    #[error("{path}: nonuniform sampling at line {line}")]
    NonUniform { path: PathBuf, line: usize },

    #[error("{path}: non-finite value in column `{column}` at line {line}")]
    NonFinite { path: PathBuf, line: usize, column: String },

    #[error("{path}: malformed CSV at line {line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },

    #[error("{}: rate mismatch, file is sampled at {} Hz but the config expects {} Hz", path.display(), round_hz(*file_hz), round_hz(*config_hz))]
    RateMismatch { path: PathBuf, file_hz: f64, config_hz: f64 },

    #[error("subject `{0}` has no flow column")]
    MissingFlow(String),

    #[error("{path}: {reason}")]
    Mismatch { path: PathBuf, reason: String },

    #[error("numeric failure: {0}")]
    Numeric(breathtrace_core::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn round_hz(hz: f64) -> f64 {
    (hz * 1e6).round() / 1e6
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::ConfigParse { .. } | CliError::ConfigInvalid(_) | CliError::Argument(_) => "config",
            CliError::MissingColumn { .. }
            | CliError::NonUniform { .. }
            | CliError::NonFinite { .. }
            | CliError::Malformed { .. }
            | CliError::RateMismatch { .. }
            | CliError::MissingFlow(_)
            | CliError::Mismatch { .. } => "data",
            CliError::Numeric(_) => "numeric",
            CliError::Io { .. } => "io",
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::ConfigParse { .. } => "config_parse",
            CliError::ConfigInvalid(_) => "config_invalid",
            CliError::Argument(_) => "invalid_argument",
            CliError::MissingColumn { .. } => "missing_column",
            CliError::NonUniform { .. } => "nonuniform_sampling",
            CliError::NonFinite { .. } => "non_finite_value",
            CliError::Malformed { .. } => "malformed_csv",
            CliError::RateMismatch { .. } => "rate_mismatch",
            CliError::MissingFlow(_) => "missing_flow",
            CliError::Mismatch { .. } => "length_mismatch",
            CliError::Numeric(_) => "numeric_failure",
            CliError::Io { .. } => "io_failure",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.category() {
            "config" => 2,
            "data" => 3,
            "numeric" => 4,
            _ => 5,
        }
    }

    /// One-line machine-readable form for stderr.
    pub fn to_json(&self) -> String {
        json!({
            "error": {
                "category": self.category(),
                "code": self.code(),
                "message": self.to_string(),
            }
        })
        .to_string()
    }
}

/// Errors from assembling a pipeline: missing training flow is a data
/// problem, anything else is a configuration problem.
pub fn from_pipeline_setup(err: breathtrace_core::Error, subjects: &[String]) -> CliError {
    match err {
        breathtrace_core::Error::InvalidParameter { name: "flow", ref reason } => {
            let id = subjects.iter().find(|id| reason.contains(&format!("`{id}`")));
            CliError::MissingFlow(id.cloned().unwrap_or_default())
        }
        other => CliError::ConfigInvalid(other),
    }
}
