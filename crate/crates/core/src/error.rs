use std::path::PathBuf;

/// Errors raised by every module of the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("empty sequence: every position is masked")]
    EmptySequence,

    #[error("degenerate embedding: row {row} of {operand} has zero norm")]
    Degenerate { operand: &'static str, row: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    Rank(Vec<usize>),

    #[error("empty batch")]
    EmptyBatch,

    #[error("no labeled positions")]
    EmptyLabels,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("candidate sets misaligned: {0}")]
    Alignment(String),

    #[error("sequence of length {len} exceeds max_seq {max}")]
    Length { len: usize, max: usize },

    #[error("text too short to perturb: {len} tokens, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("cannot merge checkpoints: {0}")]
    Merge(String),

    #[error("non-finite gradient for parameter {name} at step {step}")]
    NanGradient { name: String, step: u64 },

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
