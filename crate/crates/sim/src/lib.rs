//! Experiment harness, scenario registry and file formats around
//! `dsdsim-core`.

use std::path::PathBuf;

pub mod config;
pub mod experiment;
pub mod io;
pub mod scenarios;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("{0}")]
    Usage(String),
    #[error("unknown key '{key}'; valid keys: {valid}")]
    UnknownKey { key: String, valid: String },
    #[error("unknown scenario '{name}'; known scenarios: {known}")]
    UnknownScenario { name: String, known: String },
    #[error("invalid value '{value}' for '{key}': {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{origin}:{line}: {reason}")]
    Malformed { origin: String, line: usize, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] dsdsim_core::Error),
}

impl SimError {
    /// 1 for usage and configuration errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Io { .. } | SimError::Core(_) => 2,
            _ => 1,
        }
    }
}
