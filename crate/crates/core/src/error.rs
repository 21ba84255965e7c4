use thiserror::Error;

use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or incompatible combinations of inputs.
    Usage,
    /// Missing, malformed or inconsistent data files.
    Data,
    /// Divergence, non-finite values, integrator failure.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operation not defined for {0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::models::CheckpointError),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite {what} at step {step}")]
    Diverged { what: String, step: usize },

    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("non-finite field value at t = {t}")]
    NonFiniteField { t: f64 },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. }
            | Error::Unsupported(_)
            | Error::Autodiff(_) => ErrorKind::Usage,
            Error::Io { .. } | Error::Parse { .. } | Error::Checkpoint(_) | Error::GridMismatch(_) => {
                ErrorKind::Data
            }
            Error::Diverged { .. } | Error::StepUnderflow { .. } | Error::NonFiniteField { .. } => {
                ErrorKind::Numerical
            }
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
