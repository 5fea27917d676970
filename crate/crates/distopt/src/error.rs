//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Graph construction produced a disconnected topology. Carries the
    /// connected-component partition so callers can enlarge the radius or
    /// resample positions.
    #[error("graph is disconnected into {} components", .components.len())]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("node {node} lacks required capability `{capability}`")]
    MissingCapability { node: usize, capability: &'static str },

    #[error("non-finite iterate detected at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("missing iterate history: {0}")]
    MissingHistory(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    /// Inner (sub-problem) solver did not reach its tolerance. Carries the
    /// best iterate found and the residual it achieved.
    #[error("inner solver stalled at residual {residual:.3e}: {message}")]
    InnerSolver {
        message: String,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("variable mapping mismatch: {0}")]
    Mapping(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("instance construction failed: {0}")]
    Construction(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}
