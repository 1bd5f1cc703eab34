//! Error type shared by every solver in the crate.

use thiserror::Error;

/// Failures surfaced by the solvers, simulator and diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid market parameters: {0}")]
    InvalidParams(String),

    #[error("invalid consumption specification: {0}")]
    InvalidConsumption(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("state outside the regime of this solver: {0}")]
    OutOfRegime(String),

    #[error("argument {value} outside the domain [{lo}, {hi}]")]
    DomainError { value: f64, lo: f64, hi: f64 },

    #[error("no bracket found: {0}")]
    NoBracket(String),

    #[error("root finder did not converge: {0}")]
    ConvergenceError(String),

    #[error("no admissible ratio solves the boundary constraint at m = {m} (y0 = {y0})")]
    NoRoot { m: f64, y0: f64 },

    #[error("singular boundary derivative at m = {m} (coefficient {coefficient:e})")]
    SingularDerivative { m: f64, coefficient: f64 },

    #[error("no stopping level found below m_max = {m_max}")]
    Unbounded { m_max: f64 },

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("scheme not valid for this configuration: {0}")]
    SchemeMismatch(String),

    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed boundary document: {0}")]
    Serialization(String),
}

impl Error {
    /// True for numerical failures (as opposed to rejected inputs).
    pub fn is_convergence(&self) -> bool {
        matches!(
            self,
            Error::NoBracket(_)
                | Error::ConvergenceError(_)
                | Error::NoRoot { .. }
                | Error::SingularDerivative { .. }
                | Error::Unbounded { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
