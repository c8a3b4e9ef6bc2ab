use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// The variants are grouped so that a front end can map them onto exit
/// codes: input problems, numerical failures and I/O.
#[derive(Debug, Error)]
pub enum MpepError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite log posterior in {term}")]
    NonFinite { term: String },

    #[error("sampler: {0}")]
    Sampler(String),

    #[error("convergence: {0}")]
    NotConverged(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(String),
}

impl MpepError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MpepError::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error comes from user-supplied input rather than
    /// from the numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            MpepError::NonFinite { .. } | MpepError::Sampler(_) | MpepError::NotConverged(_)
        )
    }
}

pub type Result<T, E = MpepError> = std::result::Result<T, E>;
