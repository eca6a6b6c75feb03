use std::fs;
use std::path::Path;

use breathtrace_core::locgp::PipelineConfig;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Reads a JSON config; fields left out take their defaults. Without a
/// path the defaults are used as is.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::ConfigParse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn validate(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate().map_err(CliError::ConfigInvalid)
}

/// Hex SHA-256 of the compact JSON form of `cfg`.
pub fn config_hash(cfg: &PipelineConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Sample rate the input files must have.
pub fn expected_input_rate(cfg: &PipelineConfig) -> f64 {
    cfg.input_rate_hz.unwrap_or(cfg.sampling_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = PipelineConfig::default();
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_eq!(config_hash(&a).len(), 64);
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn input_rate_defaults_to_sampling_rate() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(expected_input_rate(&cfg), cfg.sampling_rate_hz);
        cfg.input_rate_hz = Some(25.0);
        assert_eq!(expected_input_rate(&cfg), 25.0);
    }

    #[test]
    fn no_path_gives_defaults() {
        assert_eq!(load_config(None).unwrap(), PipelineConfig::default());
    }
}
