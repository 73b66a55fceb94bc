use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A trajectory left the finite-state guard region (`|x|` or `|v|` above
    /// the divergence bound, or a non-finite coordinate) at the given step.
    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize },

    #[error("training diverged at iteration {iter}")]
    TrainingDiverged { iter: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("degenerate conditioning at t = {t}")]
    DegenerateConditioning { t: f64 },

    #[error("checkpoint integrity: {0}")]
    CheckpointIntegrity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected != got {
            Err(Error::DimensionMismatch { expected, got })
        } else {
            Ok(())
        }
    }
}
