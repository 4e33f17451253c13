use std::path::PathBuf;

use thiserror::Error;

use crate::llm::LlmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate passage id `{0}`")]
    DuplicateId(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("embedding provider failed: {0}")]
    Embedding(String),

    #[error("unbound placeholder `{{{0}}}`")]
    UnboundPlaceholder(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("could not parse model output: {0}")]
    Parse(String),

    #[error(transparent)]
    Llm(#[from] LlmError),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("note initialization produced an empty note")]
    EmptyInitialNote,

    #[error("non-finite input: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
