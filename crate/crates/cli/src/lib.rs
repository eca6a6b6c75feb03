//! File formats and commands behind the `breathtrace` binary.
//!
//! Recordings are CSV files with header `t,flow,abd,tho` (flow optional),
//! configs are JSON documents mirroring [`PipelineConfig`], and every
//! command leaves a `summary.json` next to its outputs.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod summary;
pub mod table;

pub use breathtrace_core::locgp::PipelineConfig;
pub use error::{CliError, Result};
