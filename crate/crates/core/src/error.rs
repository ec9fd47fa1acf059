//! Error type shared by all modules.

/// Errors produced by the numerical kernels and the simulation layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not Hermitian: max asymmetry {max_asymmetry:.3e} exceeds tolerance {tolerance:.3e}")]
    NotHermitian { max_asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:.3e} below allowed -{tolerance:.3e}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("rank-deficient matrix: singular value ratio {ratio:.3e} below threshold {threshold:.3e}")]
    RankDeficient { ratio: f64, threshold: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ratio mean undefined: denominator mean is zero")]
    UndefinedRatio,

    /// The interference subspace fills the whole space; callers should reduce
    /// the covariance rank (low-rank approximation) before precoding.
    #[error("no interference-free subspace: rank {rank} equals dimension {dim}; apply a low-rank covariance approximation")]
    NullSpaceExhausted { rank: usize, dim: usize },

    #[error("infeasible dimensions: {available}-dimensional free subspace cannot carry {required} users; raise the antenna count or lower the covariance rank")]
    InfeasibleDimensions { available: usize, required: usize },

    #[error("degenerate user {index}: {reason}")]
    DegenerateUser { index: usize, reason: String },

    #[error("scenario validation failed: {0}")]
    Validation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
