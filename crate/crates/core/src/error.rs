use thiserror::Error;

pub type Result<T> = std::result::Result<T, FciError>;

#[derive(Debug, Error)]
pub enum FciError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix in {context} (condition estimate {condition:.3e})")]
    Singular { context: &'static str, condition: f64 },

    #[error("solver did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("bootstrap replicate with seed {seed} produced a non-finite forecast")]
    NonFiniteReplicate { seed: u64 },

    #[error("{failed} of {total} replications failed (first: {first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("at {month}: {source}")]
    Dated {
        month: String,
        #[source]
        source: Box<FciError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FciError {
    /// True for failures caused by the numbers rather than the inputs' shape or files.
    pub fn is_numerical(&self) -> bool {
        match self {
            FciError::Singular { .. }
            | FciError::NonConvergence { .. }
            | FciError::Calibration(_)
            | FciError::NonFiniteReplicate { .. }
            | FciError::TooManyFailures { .. } => true,
            FciError::Dated { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_data(&self) -> bool {
        match self {
            FciError::Data(_) | FciError::Io(_) | FciError::Csv(_) | FciError::Json(_) => true,
            FciError::Dated { source, .. } => source.is_data(),
            _ => false,
        }
    }

    pub(crate) fn dated(self, month: impl ToString) -> FciError {
        FciError::Dated {
            month: month.to_string(),
            source: Box::new(self),
        }
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FciError::NonFinite(what))
    }
}

pub(crate) fn ensure_len(actual: usize, expected: usize, context: &'static str) -> Result<()> {
    if actual == expected {
        Ok(())
    } else {
        Err(FciError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
