use thiserror::Error;

/// Errors raised by the lattice, linear-algebra, sampling and verification layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid continuum domain: {0}")]
    InvalidDomain(String),

    #[error("no lattice point qualifies at scale N={scale}; N is too small for the shape")]
    EmptyDomain { scale: u32 },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("Cholesky factorization failed at pivot {pivot} (value {value:e})")]
    FactorizationFailure { pivot: usize, value: f64 },

    #[error("point ({x}, {y}) is within 2/N of the boundary")]
    PointTooCloseToBoundary { x: f64, y: f64 },

    #[error("continuum Green function evaluated at coincident points")]
    CoincidentPoints,

    #[error("sub-domain is not contained in the ambient domain: {0}")]
    NotASubdomain(String),

    #[error("walk exceeded the step limit of {limit} steps")]
    StepLimitExceeded { limit: u64 },

    #[error("spectral radius of G·M_f is {radius:.6} >= 1; shrink the test function")]
    ContractionViolated { radius: f64 },

    #[error("parameter out of range: {0}")]
    BadParameterRange(String),

    #[error("point-measure kind does not match its input: {0}")]
    KindMismatch(String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("site ({0}, {1}) is not in the domain")]
    UnknownSite(i32, i32),
}

pub type Result<T> = std::result::Result<T, Error>;
