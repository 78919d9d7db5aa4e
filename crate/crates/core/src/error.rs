use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("split leakage: {0}")]
    Leakage(String),

    #[error("diffusion index {index} outside 1..={steps}")]
    StepOutOfRange { index: usize, steps: usize },

    #[error("empty frame mask")]
    EmptyMask,

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("cache error in {path}: {message}")]
    Cache { path: PathBuf, message: String },

    #[error("missing {0}")]
    Missing(String),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn cache(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Cache {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
