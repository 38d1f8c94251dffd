use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch in {0}")]
    DimensionMismatch(&'static str),

    #[error("boundary region is empty")]
    EmptyRegion,

    #[error("field violates boundary constraints: {0}")]
    ConstraintViolation(String),

    #[error("boundary data carries net normal flux {0:e}")]
    FluxIncompatible(f64),

    #[error("linear solver failed: {0}")]
    LinearSolver(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("infeasible constraint set: {0}")]
    InfeasibleSet(String),

    #[error("state solver did not converge: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
