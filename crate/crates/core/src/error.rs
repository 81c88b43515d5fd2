use thiserror::Error;

use crate::kernels::KernelFamily;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{0:?} kernel has no finite-dimensional feature map")]
    UnsupportedFeatures(KernelFamily),

    #[error("invalid kernel: diagonal entry {index} is {value} (kernel not PSD or data corrupt)")]
    InvalidKernel { index: usize, value: f64 },

    #[error("oracle scale exceeded: n = {n} > cap {cap}")]
    OracleScale { n: usize, cap: usize },

    #[error("oracle degeneracy: {0}")]
    OracleDegenerate(String),

    #[error("matrix not PSD: pivot {value} at step {step}")]
    NotPsd { step: usize, value: f64 },

    #[error("degenerate feature column at step {step}: norm {norm}")]
    DegenerateFeature { step: usize, norm: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("solver diverged at iteration {iteration}")]
    /// `residual_norms` holds the norms recorded before the failure.
    Divergence { iteration: usize, residual_norms: Vec<f64> },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
