use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} outside the range of {format}")]
    Range { value: f64, format: String },

    #[error("invalid fixed-point format: {0}")]
    Format(String),

    #[error("LFSR state must be a nonzero 6-bit value, got {0}")]
    ZeroState(u8),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training data needs at least two classes, found {0}")]
    DegenerateData(usize),

    #[error("{path}: {reason}")]
    WavFormat { path: PathBuf, reason: String },

    #[error("signal is silent below the energy threshold")]
    EmptySignal,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("schema error: {0}")]
    Schema(String),

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
