use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the library. Each variant maps onto one failure class
/// so the command-line front end can derive a stable exit code from it.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric operation received an argument outside its domain
    /// (zero-norm vector, empty softmax input, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// Caller-supplied data is malformed (empty text, unknown category, bad box).
    #[error("input error: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    /// An operation was invoked in the wrong state (missing gradient,
    /// missing stage-1 parameters).
    #[error("state error: {0}")]
    State(String),

    /// A function handed to a verification helper broke its contract.
    #[error("contract error: {0}")]
    Contract(String),

    /// A serialized artifact is corrupt or carries an incompatible version.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
