use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("non-finite value in {0}")]
    Numeric(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("class {class} has no samples, threshold undefined")]
    EmptyClass { class: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("weights do not match config at `{path}`: {reason}")]
    Validation { path: String, reason: String },
    #[error("{file}:{line}: {reason}")]
    Parse {
        file: String,
        line: u64,
        reason: String,
    },
    #[error("bad tensor file {}: {reason}", path.display())]
    TensorFile { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
