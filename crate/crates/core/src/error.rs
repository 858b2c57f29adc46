use thiserror::Error;

/// Errors raised by the core scene, guidance and solver routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("scene generation failed: {0}")]
    Scene(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid annotation region {index}: {reason}")]
    Annotation { index: usize, reason: String },

    #[error("annotation parse error on line {line}: {reason}")]
    AnnotationParse { line: usize, reason: String },

    #[error("flow estimation failed: {0}")]
    Estimator(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
