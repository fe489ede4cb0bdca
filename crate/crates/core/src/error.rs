use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient for parameter {param} ({count} values)")]
    NonFiniteGradient { param: String, count: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: ell_a={ell_a} ell_b={ell_b} ell_dd={ell_dd}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        ell_a: f64,
        ell_b: f64,
        ell_dd: f64,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}: {field}: {message}")]
    Format {
        path: PathBuf,
        field: String,
        message: String,
    },

    #[error("{path}: truncated data, expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{context}: dimension mismatch, expected {expected}, found {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            cause,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }
}
