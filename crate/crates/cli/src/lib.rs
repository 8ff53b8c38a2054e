//! Configuration-driven experiment runner for the `aaflow` library.
//!
//! Every subcommand resolves an [`config::ExperimentConfig`], runs one
//! pipeline and writes its artifacts, a `manifest.json`, a `summary.txt`
//! and a `timing.json` into the output directory.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plotdata;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] aaflow::Error),
}

impl CliError {
    /// 2 for configuration and usage errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Core(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
