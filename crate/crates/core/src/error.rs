use thiserror::Error;

/// Errors raised by the simulation and verification routines.
///
/// Variants split into two families: invalid input (the caller asked for
/// something outside an operation's hypotheses) and numerical failure (the
/// inputs were fine but a computation did not converge).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("quadrature did not converge: estimate {estimate:e}, error bound {error:e} after {intervals} intervals")]
    Quadrature {
        estimate: f64,
        error: f64,
        intervals: usize,
    },

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by the caller's inputs rather than by a
    /// computation that failed on valid inputs.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::ShapeMismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
