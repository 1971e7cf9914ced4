//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error in {op}: {message}")]
    Domain { op: &'static str, message: String },

    /// Adaptive quadrature stopped before reaching the requested tolerance.
    /// Carries the best value and the achieved error estimate.
    #[error("quadrature did not converge: value {value:.6e}, achieved error {achieved_error:.3e}, requested {requested:.3e}")]
    QuadratureNonConvergence {
        value: f64,
        achieved_error: f64,
        requested: f64,
    },

    /// A simulation replica produced a non-finite field value.
    #[error("numerical failure in replica {replica} at step {step}, cell {cell}: {message}")]
    NumericalFailure {
        replica: usize,
        step: usize,
        cell: usize,
        message: String,
    },

    /// Invalid configuration or malformed input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(op: &'static str, message: impl Into<String>) -> Self {
        Error::Domain {
            op,
            message: message.into(),
        }
    }
}

/// Rejects non-finite arguments up front so they surface as domain errors
/// rather than NaN propagation.
pub fn require_finite(op: &'static str, name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(op, format!("{name} must be finite, got {value}")))
    }
}
