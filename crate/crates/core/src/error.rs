use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("log of non-positive entry {value} at index {index}")]
    LogDomain { index: usize, value: f64 },

    #[error("softmax row {row} has every entry masked")]
    AllMasked { row: usize },

    #[error("tape error: {0}")]
    Tape(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("unknown label {label:?} (expected one of {expected:?})")]
    UnknownLabel { label: String, expected: Vec<String> },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("missing embedding for key {0:?}")]
    MissingEmbedding(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Divergence {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

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

    /// Short stable identifier used by the CLI's machine-parsable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::LogDomain { .. } => "log_domain",
            Error::AllMasked { .. } => "all_masked",
            Error::Tape(_) => "tape",
            Error::Parse { .. } => "parse",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::DuplicateId(_) => "duplicate_id",
            Error::MissingEmbedding(_) => "missing_embedding",
            Error::Invalid(_) => "invalid",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
