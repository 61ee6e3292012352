use thiserror::Error;

/// Errors produced by the counting pipeline and its supporting modules.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Grid or mask dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation that requires at least one set bit got an empty mask.
    #[error("empty mask")]
    EmptyMask,

    /// An exemplar prompt selected no object pixels.
    #[error("empty exemplar: {0}")]
    EmptyExemplar(String),

    /// The segmentation backend failed.
    #[error("backend error: {0}")]
    Backend(String),

    /// An annotation or sidecar file could not be parsed.
    #[error("parse error at record {index}: {message}")]
    Parse { index: usize, message: String },

    /// Evaluation over a record set failed as a whole.
    #[error("eval error: {0}")]
    Eval(String),

    /// Synthetic scene generation could not satisfy the requested packing.
    #[error("generation error: {0}")]
    Gen(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
