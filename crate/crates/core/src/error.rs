use std::path::PathBuf;

/// Errors produced by the pruning engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("{path}: {msg}")]
    Manifest { path: String, msg: String },

    #[error("index {index} out of range for {what} (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("empty cluster")]
    EmptyCluster,

    #[error("brute-force clustering supports at most {max} channels, got {got}")]
    TooManyChannels { max: usize, got: usize },

    #[error("plan does not match model: {0}")]
    PlanMismatch(String),

    #[error("unsupported activation for this check: {0}")]
    UnsupportedActivation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::ShapeMismatch {
            what: what.into(),
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
