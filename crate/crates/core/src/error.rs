use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature grid is empty: {0}")]
    EmptyGrid(String),

    /// The weighted norm of the trial function vanished.
    #[error("Rayleigh quotient denominator collapsed ({0:e})")]
    CollapsedDenominator(f64),

    #[error("non-finite gradient at epoch {epoch}")]
    NonFiniteGradient { epoch: usize },

    #[error("zero-norm basis entry {0}")]
    ZeroNormBasis(usize),

    #[error("matrix is singular or not positive definite (pivot {0})")]
    Singular(usize),

    #[error("eigensolver did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("problem size {size} exceeds budget {budget}")]
    BudgetExceeded { size: usize, budget: usize },

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
