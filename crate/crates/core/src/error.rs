use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid feeder model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Symmetric factorization failed. `pivot_ratio` is the offending pivot divided by
    /// the largest diagonal entry, a cheap proxy for the reciprocal condition number.
    #[error("matrix is not numerically positive definite (pivot {index}, pivot ratio {pivot_ratio:e})")]
    NotPositiveDefinite { index: usize, pivot_ratio: f64 },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("parameter outside the domain: {0}")]
    Domain(String),

    /// The substation meter is noiseless, so it leaks the total current exactly.
    #[error("substation noise variance is zero; the baseline privacy loss is infinite")]
    InfinitePrivacyLoss,

    #[error("accuracy ordering violated at location {location}: full={full:e} reduced={reduced:e} base={base:e}")]
    OrderingViolation {
        location: usize,
        full: f64,
        reduced: f64,
        base: f64,
    },
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
