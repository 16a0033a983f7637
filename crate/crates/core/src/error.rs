use thiserror::Error;

pub type Result<T, E = MarketError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid market instance: {0}")]
    InvalidInstance(String),

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("user index {index} out of range for {n} users")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("linear system 2*Lambda - G is singular")]
    SingularSystem,

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("non-positive demand for users {indices:?}")]
    NonPositiveDemand {
        indices: Vec<usize>,
        min_demand: f64,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("price must be positive, got {0}")]
    DegeneratePrice(f64),

    #[error("every user is fully sponsored; the price has no interior maximizer")]
    AllSponsored,

    #[error("effective price vector is zero; the strategy is not identifiable")]
    DegenerateQ,

    #[error("no rows to summarize")]
    EmptyInput,

    #[error("i/o: {0}")]
    Io(String),
}
