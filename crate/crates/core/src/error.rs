use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension { context: String, expected: String, found: String },

    #[error("non-finite value at index {index} in {context}")]
    NonFinite { context: String, index: usize },

    #[error("invalid rank {rank}: must lie in 1..={max}")]
    InvalidRank { rank: usize, max: usize },

    #[error("infeasible rank budget for {m}x{n} matrix at layer ratio {layer_ratio}: target rank rounds to zero")]
    InfeasibleBudget { m: usize, n: usize, layer_ratio: String },

    #[error("infeasible plan: no tail-layer count k in steps of {step} below {n_layers} layers gives a layer ratio < 1 at overall ratio {overall_ratio}")]
    InfeasiblePlan { n_layers: usize, overall_ratio: String, step: usize },

    #[error("infeasible plan: compressing the last {k} of {n_layers} layers at overall ratio {overall_ratio} needs layer ratio {layer_ratio} >= 1")]
    InfeasibleTail { n_layers: usize, k: usize, overall_ratio: String, layer_ratio: String },

    #[error("numerical failure in {context}: {reason}")]
    Numerical { context: String, reason: String },

    #[error(
        "whitening matrix for {context} is singular (pivot {pivot:e} at column {column}); retry with a larger ridge"
    )]
    SingularWhitening { context: String, column: usize, pivot: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed model structure: {0}")]
    Structure(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dimension(context: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension { context: context.into(), expected: expected.to_string(), found: found.to_string() }
    }

    pub(crate) fn numerical(context: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Numerical { context: context.into(), reason: reason.into() }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Error class used by the command-line exit-code contract.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InfeasibleBudget { .. } | Error::InfeasiblePlan { .. } | Error::InfeasibleTail { .. } => {
                ErrorKind::Infeasible
            }
            Error::Numerical { .. } | Error::SingularWhitening { .. } | Error::NonFinite { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Input,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments, unreadable or malformed files, shape mismatches.
    Input,
    /// The requested compression budget cannot be met.
    Infeasible,
    /// A decomposition failed or produced unusable values.
    Numerical,
}
