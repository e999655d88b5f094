//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:.3e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix is not positive definite{}", context_suffix(.0))]
    NotPositiveDefinite(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {eigenvalue:.3e})")]
    NotPositiveSemidefinite { eigenvalue: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("infeasible sparsity: {0}")]
    InfeasibleSparsity(String),

    #[error("contraction rate undefined: {0}")]
    RateUndefined(String),

    #[error("spectrum fit failed: {0}")]
    SpectrumFit(String),

    #[error("objective became non-finite ({value}) at outer iteration {iteration}")]
    NonFiniteObjective { iteration: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}:{line}: {msg}")]
    CsvParse {
        path: String,
        line: usize,
        msg: String,
    },
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

pub type Result<T> = std::result::Result<T, Error>;
