use std::path::PathBuf;

use fedmlp::FedError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] FedError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration and I/O problems, 3 for numerical
    /// failures during training, 1 for internal protocol violations.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(FedError::DegeneratePrior { .. }) => 3,
            CliError::Core(FedError::Protocol(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
