use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("softmax row {row} has no supported position")]
    InvalidSupport { row: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("question is empty")]
    EmptyQuestion,

    #[error("question needs {needed} tokens but max_seq_len is {max_seq_len}")]
    QuestionTooLong { needed: usize, max_seq_len: usize },

    #[error("answer span at char {char_start} is outside the encoded window")]
    SpanTruncated { char_start: usize },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("regime error: {0}")]
    Regime(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite arithmetic rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
