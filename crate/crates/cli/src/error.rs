//! Error type and exit-code policy for the command-line driver.
//!
//! Two failure classes map to distinct process exit codes so scripts can
//! tell them apart: a missing input (file or directory that should have
//! been produced by an earlier command, or pointed at by configuration)
//! exits with 2, while a violated invariant (malformed data, corrupt or
//! mismatched artifacts, out-of-range parameters) exits with 3.

use std::io::ErrorKind;
use std::path::PathBuf;

use hoprank_core::CoreError;
use hoprank_neural::NeuralError;

pub const EXIT_MISSING_INPUT: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("missing input {path}: {source}")]
    MissingFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Invariant(String),

    #[error("config mismatch for {artifact}: produced under {found}, current config hashes to {expected}")]
    ConfigMismatch {
        artifact: PathBuf,
        found: String,
        expected: String,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Neural(#[from] NeuralError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Wrap an io error with the path it concerns, classifying not-found
    /// separately so the exit code comes out right.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == ErrorKind::NotFound {
            CliError::MissingFile { path, source }
        } else {
            CliError::Io { path, source }
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput(_) | CliError::MissingFile { .. } => EXIT_MISSING_INPUT,
            CliError::Invariant(_) | CliError::ConfigMismatch { .. } => EXIT_INVARIANT,
            CliError::Core(e) => core_exit_code(e),
            CliError::Neural(e) => neural_exit_code(e),
            CliError::Io { source, .. } => {
                if source.kind() == ErrorKind::NotFound {
                    EXIT_MISSING_INPUT
                } else {
                    EXIT_INVARIANT
                }
            }
        }
    }
}

fn core_exit_code(err: &CoreError) -> i32 {
    match err {
        CoreError::Io { source, .. } if source.kind() == ErrorKind::NotFound => EXIT_MISSING_INPUT,
        CoreError::NoTables { .. } => EXIT_MISSING_INPUT,
        _ => EXIT_INVARIANT,
    }
}

fn neural_exit_code(err: &NeuralError) -> i32 {
    match err {
        NeuralError::Io { source, .. } if source.kind() == ErrorKind::NotFound => {
            EXIT_MISSING_INPUT
        }
        _ => EXIT_INVARIANT,
    }
}
