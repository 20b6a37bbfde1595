use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// A knob or combination of knobs is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// Operand dimensions do not agree.
    #[error("shape error: {0}")]
    Shape(String),

    /// A non-finite value appeared where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The replay store cannot yet serve a balanced batch.
    #[error("replay not ready: {0}")]
    NotReady(String),

    /// A statistic was requested from data that cannot support it.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Malformed serialized data or CSV contents.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
