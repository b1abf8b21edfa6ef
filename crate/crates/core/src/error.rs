use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid input `{name}` = {value}: {reason}")]
    InvalidInput {
        name: &'static str,
        value: String,
        reason: String,
    },

    #[error("singular evaluation of the temporal kernel at lag {lag}")]
    SingularEvaluation { lag: f64 },

    #[error("noise model rejected: {0}")]
    ModelValidation(String),

    #[error("time {time} is not a node of the path grid")]
    OffGridQuery { time: f64 },

    #[error("exponential overflow: exponent {exponent} exceeds the guard in replicate {replicate}")]
    ExpOverflow { exponent: f64, replicate: usize },

    #[error("z-truncation too small: tail ratio {ratio:.3e} at z_max = {z_max} (need < {threshold:.1e}); increase z_max")]
    ZTruncation {
        z_max: f64,
        ratio: f64,
        threshold: f64,
    },

    #[error("interpolation table failed to reach tolerance after {refinements} refinements (max error {max_error:.3e})")]
    TableRefinement { refinements: usize, max_error: f64 },

    #[error("Cholesky factorisation failed: matrix not positive definite at pivot {pivot}")]
    Cholesky { pivot: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub(crate) fn invalid(name: &'static str, value: impl ToString, reason: impl Into<String>) -> Self {
        LabError::InvalidInput {
            name,
            value: value.to_string(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn ensure_finite(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(LabError::invalid(name, value, "must be finite"))
    }
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(LabError::invalid(name, value, "must be finite and > 0"))
    }
}

pub(crate) fn ensure_nonnegative(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(LabError::invalid(name, value, "must be finite and >= 0"))
    }
}
