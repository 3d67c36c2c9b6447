//! CLI error taxonomy mapped onto process exit codes.

use thiserror::Error;
use windconflict_core::error::{
    ApcError, ArchiveError, ConflictError, EnsembleError, GridError, MuklError, PipelineError,
    RbfError, TrajectoryError,
};

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or invalid configuration (exit code 2).
    #[error("config error: {0}")]
    Config(String),
    /// Missing, unreadable or inconsistent input data (exit code 3).
    #[error("data error: {0}")]
    Data(String),
    /// Numerical failure inside the pipeline (exit code 4).
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn data(context: &str, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {err}"))
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ArchiveError> for CliError {
    fn from(e: ArchiveError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MuklError> for CliError {
    fn from(e: MuklError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<ApcError> for CliError {
    fn from(e: ApcError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<RbfError> for CliError {
    fn from(e: RbfError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<ConflictError> for CliError {
    fn from(e: ConflictError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Ensemble(inner) => inner.into(),
            PipelineError::Mukl(inner) => inner.into(),
            PipelineError::Rbf(inner) => inner.into(),
            PipelineError::Trajectory(inner) => inner.into(),
            PipelineError::Apc(inner) => inner.into(),
            PipelineError::Conflict(inner) => inner.into(),
        }
    }
}
