use std::path::PathBuf;

use vnet_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum VnetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed WAV / mel / image input; `chunk` names the offending part.
    #[error("format error in {chunk}: {msg}")]
    Format { chunk: String, msg: String },
    #[error("config error for key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("checkpoint does not match the model:\n{0}")]
    ShapeDiff(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

impl VnetError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VnetError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(chunk: impl Into<String>, msg: impl Into<String>) -> Self {
        VnetError::Format {
            chunk: chunk.into(),
            msg: msg.into(),
        }
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        VnetError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, VnetError>;
