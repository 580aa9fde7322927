use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate weights: total weight {total:e} is below the floor {floor:e}")]
    DegenerateWeights { total: f64, floor: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("enumeration of {count} assignments exceeds the limit of {limit}")]
    EnumerationLimit { count: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("fetch failed: {0}")]
    Fetch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
