use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A Cholesky pivot fell at or below the pivot tolerance.
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    /// The objective cannot be evaluated at the requested parameters.
    #[error("objective is infeasible at the requested parameters: {0}")]
    EvaluationInfeasible(String),

    /// Every weight in the composite likelihood is zero.
    #[error("no active pairs: every weight is zero for the chosen threshold")]
    NoActivePairs,

    #[error("objective is infeasible at the initial parameters")]
    InfeasibleStart,

    #[error("empirical moment matrix is singular (determinant {0:e})")]
    SingularMoment(f64),

    #[error("too few successful replicates: {successes} of {required} required")]
    TooFewReplicates { successes: usize, required: usize },

    /// Invalid configuration or flag combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Errors that an optimizer should treat as a rejected trial point.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::EvaluationInfeasible(_) | Error::NotPositiveDefinite { .. }
        )
    }
}
