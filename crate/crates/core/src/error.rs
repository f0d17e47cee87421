use std::path::PathBuf;

/// Errors surfaced by ingestion, indexing, and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("table {file} has no \"[SKIP] UID\" column")]
    MissingUidColumn { file: String },

    #[error("duplicate fact uid {uid:?}: defined in {first} and {second}")]
    DuplicateUid {
        uid: String,
        first: String,
        second: String,
    },

    #[error("malformed header in {file}: missing column {column:?}")]
    MissingColumn { file: String, column: String },

    #[error("no fact tables found in {dir}")]
    NoTables { dir: PathBuf },

    #[error("undefined AP: empty gold set{}", qid.as_ref().map(|q| format!(" for question {q}")).unwrap_or_default())]
    EmptyGold { qid: Option<String> },

    #[error("no scoreable questions (every gold set empty)")]
    NoScoreableQuestions,

    #[error("corrupt index file {path}: {reason}")]
    CorruptIndex { path: PathBuf, reason: String },

    #[error("invalid parameter: {what}")]
    InvalidParam { what: String },

    #[error("malformed line {line} in {path}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
