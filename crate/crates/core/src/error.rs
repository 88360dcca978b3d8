use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("covariate column {column} has zero empirical variance")]
    ZeroVarianceCovariate { column: usize },

    #[error("group '{group}': observation {index} has time {time} not after previous time {previous} (duplicate or unsorted timestamps)")]
    NonIncreasingTimes {
        group: String,
        index: usize,
        time: f64,
        previous: f64,
    },

    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: &'static str },

    #[error("slice sampler failed: {0}")]
    SliceSampler(String),

    #[error("transport grid is unstable: {0}")]
    Unstable(String),

    #[error("observation time {time} s is beyond the simulated horizon ({horizon} s)")]
    BeyondHorizon { time: f64, horizon: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("config hash mismatch: {0}")]
    HashMismatch(String),

    #[error("at iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn ensure_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
