use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("primitive `{0}` is already registered")]
    DuplicatePrimitive(String),

    #[error("primitive `{name}` declared with arity {declared} but its kernel takes {actual} argument(s)")]
    ArityMismatch { name: String, declared: usize, actual: usize },

    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),

    #[error("variable `{0}` is not bound")]
    Unbound(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward called before forward")]
    NotEvaluated,

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
