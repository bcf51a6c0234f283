use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("no route from satellite {src} to satellite {dst}")]
    NoRoute { src: usize, dst: usize },

    #[error("no satellite caches content {content}")]
    NoHolder { content: usize },

    #[error("rejected action: satellite {sat} caches {cached} contents, capacity is {capacity}")]
    CapacityViolation {
        sat: usize,
        cached: usize,
        capacity: usize,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{field}: {message}")]
    Validation { field: String, message: String },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("refusing to compare: {0}")]
    Incompatible(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
