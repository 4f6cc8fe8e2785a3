//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty manifest")]
    EmptyManifest,

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("duplicate article id '{0}'")]
    DuplicateId(String),

    #[error("image decode failed{}: {msg}", fmt_id(.id))]
    ImageDecode { id: Option<String>, msg: String },

    #[error("image shape mismatch: expected {expected}, found {found}")]
    ImageShape { expected: String, found: String },

    #[error("translation failed for article '{id}': {msg}")]
    Translator { id: String, msg: String },

    #[error("encoder role mismatch: expected {expected}, found {found}")]
    RoleMismatch { expected: String, found: String },

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: String,
        expected: String,
        found: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid label {0}: must be 0 (fake) or 1 (real)")]
    Label(i64),

    #[error("missing modality for pathway '{pathway}': {msg}")]
    MissingModality { pathway: String, msg: String },

    #[error("numerical overflow: {0}")]
    Numerical(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_id(id: &Option<String>) -> String {
    match id {
        Some(id) => format!(" for article '{id}'"),
        None => String::new(),
    }
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
