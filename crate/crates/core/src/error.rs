use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("matrix is not unitary (max deviation {deviation:.3e})")]
    NonUnitary { deviation: f64 },

    #[error("eigensolver did not converge for a {dim}x{dim} matrix")]
    ConvergenceFailure { dim: usize },

    #[error("operation requires a complete group closure")]
    IncompleteClosure,

    #[error("closure refused: {0}")]
    ClosureRefused(String),

    #[error("spectral radius is zero; submultiplicative defect undefined")]
    ZeroSpectralRadius,

    #[error("diagonal factor does not have determinant 1")]
    DeterminantNotOne,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("prime mismatch: {left} vs {right}")]
    PrimeMismatch { left: u64, right: u64 },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
