use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}: {msg}")]
    MalformedRow { path: PathBuf, row: usize, msg: String },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("unknown record id `{0}`")]
    UnknownId(String),

    #[error("self-pair on record id `{0}`")]
    SelfPair(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("vector for ({id}, signature {signature}) is not unit norm (|v| = {norm})")]
    NotUnitNorm { id: String, signature: u32, norm: f64 },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
