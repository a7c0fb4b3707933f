//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum IckError {
    #[error("matrix is not positive definite (jitter schedule exhausted, last jitter {last_jitter:e})")]
    NotPositiveDefinite { last_jitter: f64 },

    #[error("matrix is not symmetric within tolerance (max asymmetry {max_asym:e})")]
    NotSymmetric { max_asym: f64 },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("triangular factor is numerically singular (|diagonal| {value:e} at index {index})")]
    SingularFactor { index: usize, value: f64 },

    #[error("eigenvalue iteration did not converge within {max_iters} sweeps")]
    NoConvergence { max_iters: usize },

    #[error("kernel has no implemented spectral sampler: {kernel}")]
    UnsupportedSpectrum { kernel: String },

    #[error("no closed-form network kernel for activation {activation}")]
    UnsupportedActivation { activation: String },

    #[error("input is missing source {index}")]
    MissingSource { index: usize },

    #[error("non-finite loss ({value}) at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },

    #[error("ensemble has no members")]
    EmptyEnsemble,

    #[error("degenerate input for {context}: {detail}")]
    DegenerateInput {
        context: &'static str,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error on {path}: {detail}")]
    Io { path: String, detail: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column {column}: {detail}")]
    Parse {
        row: usize,
        column: String,
        detail: String,
    },
}

pub type Result<T> = std::result::Result<T, IckError>;

impl IckError {
    pub(crate) fn shape(context: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        IckError::ShapeMismatch {
            context,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
