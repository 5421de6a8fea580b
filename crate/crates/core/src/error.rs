use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = D3aError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum D3aError {
    #[error("non-finite value for {0}")]
    NonFinite(&'static str),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("embedding has zero norm")]
    ZeroEmbedding,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("index {index} out of range for {len} ground-truth objects")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("depth {depth} m outside (0, {max_range}] m")]
    DepthOutOfRange { depth: f64, max_range: f64 },

    #[error("world generation infeasible: {0}")]
    Infeasible(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("referential integrity violated: {0}")]
    Integrity(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl D3aError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        D3aError::Io {
            path: path.into(),
            source,
        }
    }
}
