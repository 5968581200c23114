use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("point {point:?} lies outside the [-1, 1]^3 cube")]
    OutOfCube { point: [f64; 3] },

    #[error("scene has {views} view(s); at least 2 are required")]
    TooFewViews { views: usize },

    #[error("scene has no points")]
    EmptyPointCloud,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("malformed {format} file: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("missing file referenced by manifest: {0}")]
    MissingFile(PathBuf),

    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }
}
