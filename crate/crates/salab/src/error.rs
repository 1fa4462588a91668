use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not Hurwitz (max real part of spectrum {max_real_part:e})")]
    NotHurwitz { max_real_part: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("no convergence after {iterations} iterations: {what}")]
    NoConvergence { what: String, iterations: usize },

    #[error("trajectory fault at stream {stream} step {step}: non-finite iterate")]
    TrajectoryFault { stream: u64, step: usize },

    #[error("{count} trajectories faulted (first indices: {indices:?})")]
    EnsembleFault { count: usize, indices: Vec<u64> },

    #[error("condition violated: {0}")]
    ConditionViolated(String),

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("enumeration cap exceeded: k = {k} > {cap}")]
    EnumerationCap { k: usize, cap: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("non-finite estimate at k = {k}: {what}")]
    NonFinite { k: usize, what: String },

    #[error("accuracy unattainable: {0}")]
    Unattainable(String),

    #[error("range mismatch: {0}")]
    RangeMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
