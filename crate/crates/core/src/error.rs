use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument or configuration does not hold.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("query outside domain: {0}")]
    Domain(String),

    #[error("non-finite state after step with dt = {dt}; reduce the time step")]
    NumericalBlowUp { dt: f64 },

    #[error("insufficient excitation: regressor is rank deficient in column(s) {columns:?} (condition number {condition:.3e})")]
    InsufficientExcitation { columns: Vec<String>, condition: f64 },

    #[error("no convergence after {iterations} iterations (loss {loss:.6e}, alpha {alpha:.6e}, beta {beta:.6e})")]
    NoConvergence {
        iterations: usize,
        loss: f64,
        alpha: f64,
        beta: f64,
    },

    #[error("no path between {from:?} and {to:?}")]
    NoPath { from: (usize, usize), to: (usize, usize) },

    #[error("world generation failed after {attempts} attempts: {reason}")]
    WorldGeneration { attempts: usize, reason: String },

    #[error("controller diverged at step {step}: position error {error:.3} m")]
    ControllerDiverged { step: usize, error: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("checksum mismatch for {}", path.display())]
    Checksum { path: PathBuf },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
