use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too small: n_phi = {n_phi} (min 8), n_radial = {n_radial} (min 3)")]
    GridSize { n_phi: usize, n_radial: usize },

    #[error("fields live on different grids: {left:?} vs {right:?}")]
    GridMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("field has {found} values, grid has {expected} nodes")]
    FieldLength { expected: usize, found: usize },

    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("linear solve failed: {reason} (relative residual {residual:e})")]
    Solver { reason: String, residual: f64 },

    #[error(
        "eigenvalue iteration did not converge after {iterations} steps (last change {change:e})"
    )]
    Eigen { iterations: usize, change: f64 },

    #[error("density normalizer is not positive ({0})")]
    Normalizer(f64),

    #[error("fixed point did not converge after {sweeps} sweeps (residual {residual:e})")]
    FixedPoint {
        sweeps: usize,
        residual: f64,
        last_iterate: Box<Vec<f64>>,
    },

    #[error("direction is not a descent direction (slope {0:e})")]
    NotDescent(f64),

    #[error("line search failed after {backtracks} backtracks (last step {step:e})")]
    LineSearch { backtracks: usize, step: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
