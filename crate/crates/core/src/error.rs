use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch ({detail})")]
    Dimension { op: &'static str, detail: String },

    #[error("{op}: {what} must be {requirement}")]
    InvalidMatrix {
        op: &'static str,
        what: &'static str,
        requirement: &'static str,
    },

    #[error("{op}: no convergence after {iterations} iterations (last change {last_change:e})")]
    NoConvergence {
        op: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("{op}: eigenvalue certificate failed for {value} (residual {residual:e} > {bound:e})")]
    EigenCertificate {
        op: &'static str,
        value: String,
        residual: f64,
        bound: f64,
    },

    #[error("{0}: matrix is singular")]
    Singular(&'static str),

    #[error("angle of a zero vector is undefined")]
    UndefinedAngle,

    #[error("operating point is at LC resonance (|1 - w^2 L C| = {0:e})")]
    Resonance(f64),

    #[error("operating point has non-positive synchronizing coefficient {0}")]
    UnstableOperatingPoint(f64),

    #[error("series has {0} extrema, at least 3 are needed")]
    InsufficientOscillation(usize),

    #[error("invalid parameter `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True when the error comes from numerics rather than from user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::EigenCertificate { .. }
                | Error::Singular(_)
                | Error::UndefinedAngle
                | Error::Resonance(_)
                | Error::UnstableOperatingPoint(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
