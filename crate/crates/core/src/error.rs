//! Error taxonomy shared across the crate.

use crate::estimation::StartDiagnostic;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors reported by the channel, injection, simulation and estimation
/// operations.
///
/// The variants map onto distinct failure classes so that callers (and the
/// CLI exit codes) can distinguish bad inputs from bad data from failed
/// optimizations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation,
    /// e.g. evaluating a channel response at `t <= 0`.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value or tuning parameter is invalid (non-positive
    /// tolerance, too-coarse grid, inconsistent simulation config, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The supplied measurement data cannot support the requested
    /// computation (trace too short, derivative identically zero, ...).
    #[error("data error: {0}")]
    Data(String),

    /// The data was formally valid but does not exhibit the structure the
    /// operation needs (no plateau, no injection transient, ...).
    #[error("fit quality error: {0}")]
    FitQuality(String),

    /// No optimizer start converged. Carries per-start diagnostics so the
    /// caller can inspect what each local solve did.
    #[error("convergence error: {message}")]
    Convergence {
        message: String,
        diagnostics: Vec<StartDiagnostic>,
    },

    /// Failure reading or writing one of the external file formats.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn fit_quality(msg: impl Into<String>) -> Self {
        Error::FitQuality(msg.into())
    }
}
