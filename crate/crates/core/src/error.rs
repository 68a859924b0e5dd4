use thiserror::Error;

/// Errors surfaced by the toolkit.
///
/// Variants split into two families: domain errors (bad parameters or
/// inputs, reported with the offending field) and numerical failures
/// (solver breakdown, failed brackets, overflow).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Domain { field: &'static str, reason: String },

    #[error("{what} is not available for model `{model}`")]
    Unsupported { what: &'static str, model: String },

    #[error("statistic overflowed the floating-point range at step {step}")]
    Overflow { step: u64 },

    #[error("kernel spectral radius {radius:.12} is too close to 1 for a stable solve")]
    SpectralRadius { radius: f64 },

    #[error("separable kernel is resonant: 1 - int X Y' = {denominator:e}")]
    Resonance { denominator: f64 },

    #[error("root bracket failed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn domain(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain { field, reason: reason.into() }
    }

    /// True for errors caused by the caller's inputs rather than by the numerics.
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain { .. } | Error::Unsupported { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_positive(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(field, format!("must be a positive finite number, got {value}")))
    }
}

