use thiserror::Error;

/// Errors surfaced by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("argument {value} outside the domain {domain}")]
    OutOfDomain { value: f64, domain: String },

    #[error("integral diverges: {0}")]
    Divergent(String),

    #[error("quadrature did not converge: achieved error bound {achieved:e}, requested {requested:e}")]
    NonConvergence { achieved: f64, requested: f64 },

    #[error("loss of precision: {0}")]
    LossOfPrecision(String),

    #[error("schedule validation failed: {0}")]
    ScheduleRejected(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
