use std::path::PathBuf;

use thiserror::Error;
use uda_core::trainer::TrainError;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("cannot read config {path}: {reason}")]
    ConfigFile { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("incompatible diagnostic: {0}")]
    Incompatible(String),
    #[error("{failed} of {total} sweep runs failed")]
    Sweep { failed: usize, total: usize },
    #[error("gradient check failed for {0}")]
    GradCheck(String),
    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },
    #[error("{0}")]
    Core(#[from] uda_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    pub fn format(what: impl Into<String>, reason: impl ToString) -> Self {
        LabError::Format { what: what.into(), reason: reason.to_string() }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::ConfigFile { .. } | LabError::Config(_) => 2,
            LabError::Train(TrainError::Config(_)) => 2,
            LabError::Train(TrainError::NonFinite { .. }) => 3,
            LabError::Train(TrainError::Numeric { .. }) => 3,
            LabError::Incompatible(_) => 4,
            LabError::Sweep { .. } => 5,
            LabError::GradCheck(_) => 1,
            LabError::Format { .. } | LabError::Core(_) | LabError::Io { .. } => 1,
        }
    }
}
