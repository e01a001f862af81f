use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid null specification: {0}")]
    InvalidSpec(String),
    #[error("the null set is empty: {0}")]
    Infeasible(String),
    #[error("vertex enumeration infeasible for K = {k} (cap {cap}); use the convex strategy")]
    TooManyVertices { k: usize, cap: usize },
    #[error("boundary too large: bound {bound} exceeds cap {cap}")]
    BoundaryTooLarge { bound: u128, cap: u128 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("stratum {stratum} is exhausted")]
    Exhausted { stratum: usize },
    #[error("every stratum is exhausted")]
    AllExhausted,
    #[error("negative betting term {z} (bet {lambda} exceeds its cap)")]
    NegativeTerm { z: f64, lambda: f64 },
    #[error("incompatible method configuration: {0}")]
    Incompatible(String),
    #[error("convex solver did not converge (projected gradient norm {norm:e})")]
    NoConvergence { norm: f64 },
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
