use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate class prior for class {class}: {value}")]
    DegeneratePrior { class: usize, value: f64 },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("dataset generation failed: {0}")]
    Generation(String),
}

impl FedError {
    /// Attach round/client context to a divergence error, pass others through.
    pub fn with_context(self, round: usize, client: usize) -> Self {
        match self {
            FedError::Diverged(msg) => {
                FedError::Diverged(format!("round {round}, client {client}: {msg}"))
            }
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, FedError::Diverged(_))
    }
}

pub type Result<T> = std::result::Result<T, FedError>;
