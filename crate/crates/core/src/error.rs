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

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("cannot sample noise from a corpus of {0} item(s); need at least 2")]
    CannotSample(usize),

    #[error("composition error: {0}")]
    Composition(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown token {token:?} in language {language:?}")]
    UnknownToken { language: String, token: String },

    #[error("token id {id} out of range for language {language:?} (size {size})")]
    UnknownId {
        language: String,
        id: u32,
        size: usize,
    },

    #[error("unknown language {0:?}")]
    UnknownLanguage(String),

    #[error("non-finite gradient for {language:?} token {id}")]
    NonFinite { language: String, id: u32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot represent document {0:?}: no in-vocabulary tokens")]
    Representation(String),

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("cannot resume from {}: {message}", path.display())]
    Resume { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
