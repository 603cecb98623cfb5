use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("company {company_id}: invalid field `{field}`: {message}")]
    Validation {
        company_id: String,
        field: String,
        message: String,
    },

    #[error("non-finite loss while probing parameter `{parameter}`")]
    NonFinite { parameter: String },

    #[error("non-finite training loss for company {company_id} in round {round}")]
    Diverged { company_id: String, round: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("embedding exchange {index} failed: {message}")]
    Remote { index: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem or network layer rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
