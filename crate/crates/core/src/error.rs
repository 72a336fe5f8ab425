use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error: duplicate id {0:?}")]
    DuplicateId(String),

    #[error("stage {stage:?} has no label for ids: {}", ids.join(", "))]
    MissingLabel { stage: String, ids: Vec<String> },

    #[error("unrecognized label {label:?} for stage {stage:?} on id {id:?} (strict mode)")]
    UnknownLabel { stage: String, id: String, label: String },

    #[error("split sizes invalid: {0}")]
    Size(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid embedding file: {0}")]
    Format(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("k = {k} out of range for {n} rows ({detail})")]
    KOutOfRange { k: usize, n: usize, detail: &'static str },

    #[error("misaligned inputs: {0}")]
    Misalignment(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training data contains a single class ({0}); use a constant base score instead")]
    SingleClass(u8),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown source {name:?}; available: {}", available.join(", "))]
    UnknownSource { name: String, available: Vec<String> },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("audit stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
