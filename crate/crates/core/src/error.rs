use thiserror::Error;

/// Errors raised by the registration engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate covariance (condition number {condition:.3e})")]
    DegenerateCovariance { condition: f64 },

    #[error("rotation projection is ambiguous: input has rank < 2")]
    AmbiguousProjection,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no supporting data: every component has zero posterior mass")]
    NoSupport,

    #[error("degenerate geometry: supporting points are coincident or collinear")]
    DegenerateGeometry,

    #[error("semidefinite relaxation did not converge after {iterations} iterations (gap {gap:.3e})")]
    RelaxationFailure { iterations: usize, gap: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
