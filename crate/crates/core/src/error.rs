use thiserror::Error;

/// Errors produced by integrators, solvers and grid builders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown scheme or object: {0}")]
    NotFound(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("iteration failed to converge: {0}")]
    SolverFailure(String),

    #[error("matrix is singular or numerically rank-deficient: {0}")]
    SingularMatrix(String),

    #[error("degenerate step: {0}")]
    DegenerateStep(String),

    #[error("no sign change found when bracketing the relaxation root: {0}")]
    NoBracket(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
