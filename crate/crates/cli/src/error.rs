use blurdecomp_core::Error as CoreError;
use blurdecomp_nets::NetError;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    InvalidAnnotation(String),
    #[error("{0}")]
    NotFound(String),
    /// Checkpoint and request disagree on the configuration.
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::InvalidAnnotation(_) => "invalid_annotation",
            CliError::NotFound(_) => "not_found",
            CliError::Mismatch(_) => "config_mismatch",
            CliError::Unprocessable(_) => "unprocessable",
            CliError::Core(e) => core_kind(e),
            CliError::Net(e) => match e {
                NetError::Core(c) => core_kind(c),
                NetError::Shape(_) => "shape",
                NetError::Config(_) => "config",
                NetError::Checkpoint(_) => "checkpoint",
                NetError::NonFinite(_) => "non_finite",
                NetError::EmptyDataset(_) => "empty_dataset",
                NetError::Io(_) => "io",
                _ => "model",
            },
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
        }
    }

    /// HTTP status for the service.
    pub fn status(&self) -> u16 {
        match self.kind() {
            "usage" | "invalid_annotation" | "format" | "json" | "config" => 400,
            "not_found" => 404,
            "config_mismatch" => 409,
            "unprocessable" | "shape" => 422,
            _ => 500,
        }
    }

    /// Single-line JSON record.
    pub fn to_json_line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        json!({"error": {"status": self.status(), "kind": self.kind(), "message": msg}}).to_string()
    }
}

fn core_kind(e: &CoreError) -> &'static str {
    match e {
        CoreError::Annotation { .. } | CoreError::AnnotationParse { .. } => "invalid_annotation",
        CoreError::Shape { .. } => "shape",
        CoreError::Config(_) => "config",
        CoreError::Io(_) => "io",
        CoreError::Image(_) | CoreError::Format(_) | CoreError::Json(_) => "format",
        _ => "core",
    }
}
