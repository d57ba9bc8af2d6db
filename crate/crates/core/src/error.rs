use std::path::PathBuf;

use thiserror::Error;

use crate::models::Params;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("anomaly pool too small: {required} samples required, {available} available")]
    Capacity { required: usize, available: usize },

    #[error("ingestion error at {path}: {message}")]
    Ingestion { path: PathBuf, message: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("state error: {0}")]
    State(String),

    /// Training diverged. Carries the last parameter set whose loss was finite.
    #[error("training error ({context}): {message}")]
    Training {
        context: String,
        message: String,
        last_finite: Option<Box<Params>>,
    },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("report error for run `{run}`: {message}")]
    Report { run: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Prefixes the context of a training error, leaving other variants untouched.
    pub fn with_training_context(self, prefix: &str) -> Self {
        match self {
            Error::Training {
                context,
                message,
                last_finite,
            } => Error::Training {
                context: format!("{prefix}/{context}"),
                message,
                last_finite,
            },
            other => other,
        }
    }
}
