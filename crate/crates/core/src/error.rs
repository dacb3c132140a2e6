use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {x} is outside the sampled datum range [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },

    #[error("invalid initial datum: {0}")]
    InvalidDatum(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid stepper configuration: {0}")]
    InvalidConfig(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("node positions out of order at node {index}: y[{index}] = {left}, y[{next}] = {right}", next = index + 1)]
    OrderViolation { index: usize, left: f64, right: f64 },

    #[error("step failure at t = {t}: picard iteration did not converge after {iterations} iterations (last update {residual:e})")]
    StepFailure {
        t: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            message: message.to_string(),
        }
    }
}
