//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors reported by the linear algebra, sampling, matching and estimator
/// routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("dimension {dim} exceeds the supported maximum {max}")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("matrix is not positive definite (pivot {pivot:e} in column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:e})")]
    NotPositiveSemiDefinite { eigenvalue: f64 },

    #[error("matrix is numerically singular (smallest eigenvalue {eigenvalue:e})")]
    SingularMatrix { eigenvalue: f64 },

    #[error("argument {value} outside domain {domain}")]
    DomainError { value: f64, domain: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("sample covariance is numerically singular (smallest eigenvalue {eigenvalue:e})")]
    SingularSampleCovariance { eigenvalue: f64 },

    #[error("sample outside the distribution support (cdf value {cdf})")]
    SupportViolation { cdf: f64 },

    #[error("sample variance {variance:e} is too small for second order matching")]
    DegenerateVariance { variance: f64 },

    #[error("integrand moment `{0}` is not populated")]
    MissingMoment(&'static str),

    #[error("integrand has no derivative: {0}")]
    UnsupportedDerivative(&'static str),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("values must be finite (found {value} at index {index})")]
    NonFiniteValue { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
