use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate sequence: data matrix has rank 0")]
    DegenerateSequence,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("no null space: subspace dimension equals ambient dimension {0}")]
    NoNullSpace(usize),

    #[error("tangent vector is not horizontal: |U^T H| = {0:e}")]
    NotHorizontal(f64),

    #[error("perturbation theory inapplicable: {0}")]
    PerturbationInapplicable(String),

    #[error("{what} did not converge after {iterations} iterations ({detail})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        detail: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown class label {0:?}")]
    UnseenClass(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
