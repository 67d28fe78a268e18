use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the simulator can report.
///
/// [`Error::category`] groups variants into the three classes the CLI maps
/// to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("cannot stratify: class {class} has only {count} sample(s)")]
    Stratification { class: usize, count: usize },

    #[error("graph construction failed after trying seeds {seeds:?}")]
    ConstructionFailed { seeds: Vec<u64> },

    #[error("non-finite gradient at local step {step}")]
    NonFiniteGradient { step: usize },

    #[error("numeric divergence at round {round}, node {node}: {detail}")]
    Divergence {
        round: usize,
        node: usize,
        detail: String,
    },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorCategory::Config,
            Error::NonFiniteGradient { .. } | Error::Divergence { .. } => ErrorCategory::Numeric,
            Error::LengthMismatch { .. }
            | Error::Format { .. }
            | Error::Range(_)
            | Error::Stratification { .. }
            | Error::ConstructionFailed { .. }
            | Error::Io { .. } => ErrorCategory::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }
}
