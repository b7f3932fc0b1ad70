use std::path::PathBuf;

use glam_core::GlamError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown configuration key: {0}")]
    UnknownKey(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error(transparent)]
    Runtime(#[from] GlamError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit code; clap reserves 2 for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownKey(_) => 3,
            CliError::InvalidConfig(_) => 4,
            CliError::MissingFile(_) => 5,
            CliError::Runtime(_) => 6,
            CliError::Io(_) => 7,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::UnknownKey(_) => "unknown_key",
            CliError::InvalidConfig(_) => "invalid_config",
            CliError::MissingFile(_) => "missing_file",
            CliError::Runtime(_) => "runtime",
            CliError::Io(_) => "io",
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        let msg = e.to_string();
        if msg.starts_with("unknown field") {
            CliError::UnknownKey(msg)
        } else {
            CliError::InvalidConfig(msg)
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
