//! Configuration, data ingestion, experiment orchestration and result files.

pub mod cli;
pub mod config;
pub mod emit;
pub mod experiment;
pub mod ingest;
pub mod manifest;
pub mod verify;

pub use config::ExperimentConfig;

use crate::error::Error;

/// Failures surfaced by the command line, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Numeric(_) => 4,
        }
    }
}

impl From<Error> for HarnessError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } => HarnessError::Config(e.to_string()),
            Error::InsufficientData(_) | Error::OffGrid { .. } => HarnessError::Data(e.to_string()),
            Error::Numeric(_) | Error::Convergence { .. } | Error::Divergence { .. } => HarnessError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Data(e.to_string())
    }
}
