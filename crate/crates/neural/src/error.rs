use std::path::PathBuf;

/// Errors from model configuration, losses, and checkpoint files.
#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("invalid model config: {what}")]
    InvalidConfig { what: String },

    #[error("invalid input: {what}")]
    InvalidInput { what: String },

    #[error("undefined AP: no positive labels")]
    UndefinedAp,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, NeuralError>;

impl NeuralError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NeuralError::Io {
            path: path.into(),
            source,
        }
    }
}
