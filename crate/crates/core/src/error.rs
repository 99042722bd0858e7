use thiserror::Error;

#[derive(Debug, Error)]
pub enum DppError {
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e}, largest {max_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64, max_eigenvalue: f64 },

    #[error("correlation kernel spectrum must lie in (0, 1), found eigenvalue {eigenvalue}")]
    InvalidCorrelationSpectrum { eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("ground set of size {n} exceeds the enumeration cap of {cap}")]
    GroundSetTooLarge { n: usize, cap: usize },

    #[error("normalization identity failed: relative residual {residual:e}")]
    NormalizationMismatch { residual: f64 },

    #[error("empty sample batch")]
    EmptyBatch,

    #[error("direction is not in the Hessian null space: {reason}")]
    NotNullDirection { reason: String },

    #[error("Fisher information is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularInformation { min_eigenvalue: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("log-log fit needs at least 3 points, got {0}")]
    InsufficientPoints(usize),

    #[error("log-log fit requires positive values, got ({x}, {y})")]
    NonpositiveValue { x: f64, y: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DppError>;
