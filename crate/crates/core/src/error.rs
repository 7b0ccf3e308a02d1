use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid model spec: {0}")]
    SpecValidation(String),

    #[error("incompatible teacher/student: {0}")]
    Incompatible(String),

    #[error("component mapping failed: {0}")]
    Mapping(String),

    #[error("selection plan integrity: {0}")]
    PlanIntegrity(String),

    #[error("archive format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("label error: {0}")]
    Label(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("ingestion error in {}: {message}", path.display())]
    Ingestion { path: PathBuf, message: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }
}
