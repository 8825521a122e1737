use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Each variant maps onto one CLI exit code through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code: 2 config, 3 ingestion, 4 numeric divergence,
    /// 5 internal contract violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Ingestion(_) | Error::Io(_) => 3,
            Error::Numeric(_) | Error::Singular(_) => 4,
            Error::Shape(_) | Error::Contract(_) | Error::Degenerate(_) => 5,
        }
    }

    /// Short machine-readable tag for error JSON documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Ingestion(_) => "ingestion",
            Error::Numeric(_) => "numeric",
            Error::Singular(_) => "singular",
            Error::Degenerate(_) => "degenerate",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn shape_err(what: impl Into<String>) -> Error {
    Error::Shape(what.into())
}
