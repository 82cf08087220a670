use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e}); regularization too small")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("probability {0} outside [0, 1)")]
    InvalidProbability(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample size mismatch: |X| = {x} but |Y| = {y}")]
    SizeMismatch { x: usize, y: usize },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("gradient contains non-finite entries")]
    NonFiniteGradient,

    #[error("could not draw {j} test locations at least {eps:e} apart after {attempts} attempts")]
    SeparationFailure { j: usize, eps: f64, attempts: usize },

    #[error("pooled covariance is singular (n = {n}, d = {d})")]
    SingularCovariance { n: usize, d: usize },

    #[error("operation requires the blobs problem")]
    WrongKind,

    #[error("VC index must be at least 2, got {0}")]
    InvalidVc(usize),

    #[error("trial {0} has no test locations")]
    MissingTheta(usize),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("ragged rows: row {row} has {got} fields, expected {expected}")]
    RaggedRows { row: usize, expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{failed} of {trials} trials failed (limit 1%)")]
    TooManyFailures { failed: usize, trials: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
