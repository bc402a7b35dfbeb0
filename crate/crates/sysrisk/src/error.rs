use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const VALIDATION: i32 = 4;
    pub const NOT_CONVERGED: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("did not converge: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Core(#[from] sysrisk_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Io { .. } => exit::IO,
            CliError::Parse { .. } | CliError::Format { .. } | CliError::Validation(_) => exit::VALIDATION,
            CliError::NotConverged(_) => exit::NOT_CONVERGED,
            CliError::Core(sysrisk_core::Error::NotConverged { .. }) => exit::NOT_CONVERGED,
            CliError::Core(_) => exit::VALIDATION,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
