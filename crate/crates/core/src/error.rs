use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("axis {axis}: degenerate interval [{lower}, {upper}]")]
    DegenerateInterval { axis: usize, lower: f64, upper: f64 },

    #[error("axis {axis}: need at least 2 points, got {count}")]
    TooFewPoints { axis: usize, count: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("measures live on different grids")]
    GridMismatch,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("axis set must be a nonempty subset of 0..{dim}")]
    InvalidAxes { dim: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("pressure is only defined for nonnegative densities, got {0}")]
    NegativeDensity(f64),

    #[error("proximal step needs a positive reference vector; entry {index} is {value}")]
    NonPositiveReference { index: usize, value: f64 },

    #[error("proximal root finder failed at index {index}")]
    ProxFailure { index: usize },

    #[error("matrix is singular or not invertible in floating point")]
    SingularMatrix,

    #[error("chain length {0} out of the supported range 1..=8")]
    ChainLengthUnsupported(usize),

    #[error("dense kernel needs {needed} bytes, over the {budget}-byte budget; use the matrix-free mode")]
    MemoryBudget { needed: usize, budget: usize },

    #[error("numerical underflow in the scaling iteration at iteration {iteration}; enable log-domain absorption")]
    Underflow { iteration: usize },

    #[error("scaling iteration did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
