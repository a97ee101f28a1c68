use std::io;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// No stored point matches the requested action inside the window.
    #[error("no neighbours for action {action} in window [{lo}, {hi})")]
    EmptyNeighborhood { action: usize, lo: usize, hi: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("point {point:?} lies outside the domain")]
    OutOfDomain { point: Vec<f64> },

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(#[from] toml::de::Error),

    /// Wraps an error with the experiment cell it came from.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// True when the root cause is a caller mistake (bad input, bad config).
    pub fn is_invalid_input(&self) -> bool {
        match self {
            Error::InvalidInput(_) | Error::OutOfDomain { .. } | Error::Config(_) => true,
            Error::Csv(_) | Error::Json(_) => true,
            Error::Context { source, .. } => source.is_invalid_input(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
