use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("format error in {file}: {msg}")]
    Format { file: String, msg: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid label: {0}")]
    Label(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("calibration statistics belong to another model (stats {stats}, model {model})")]
    ChecksumMismatch { stats: String, model: String },
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(file: impl std::fmt::Display, msg: impl Into<String>) -> Self {
        Error::Format {
            file: file.to_string(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
