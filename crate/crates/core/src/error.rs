use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate token {token:?} at line {line}")]
    DuplicateToken { token: String, line: usize },

    #[error("empty token at line {line}")]
    EmptyLine { line: usize },

    #[error("vocabulary has no unknown token but {word:?} cannot be segmented")]
    MissingUnknownToken { word: String },

    #[error("entity name is empty after normalization")]
    EmptyName,

    #[error("entity corpus is empty")]
    EmptyCorpus,

    #[error("duplicate entity id {0:?}")]
    DuplicateEntity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("could not make the code of {entity_id:?} unique after {attempts} random draws")]
    UniquenessUnattainable { entity_id: String, attempts: u64 },

    #[error("code space of {available} codes cannot hold {needed} entities")]
    CodeSpaceTooSmall { needed: usize, available: String },

    #[error("code {code:?} of {entity_id:?} is already stored")]
    DuplicateCode { entity_id: String, code: Vec<u32> },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("training diverged at step {step}: loss {loss} vs initial {initial}")]
    Divergence { step: usize, loss: f64, initial: f64 },

    #[error("evaluation split {0:?} is empty")]
    EmptySplit(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }
}
