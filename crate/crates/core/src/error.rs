use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("missing column: {0}")]
    MissingColumn(String),

    #[error("row {row}: column {column}: cannot parse {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("unseen value {value:?} in column {column}")]
    UnseenCategory { column: String, value: String },

    #[error("column {0} is constant; z-score needs a nonzero standard deviation")]
    ConstantColumn(String),

    #[error("unknown group {0}")]
    UnknownGroup(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (NaN/Inf) rather than of inputs.
    pub fn is_numeric_abort(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
