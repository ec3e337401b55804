use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("base matrix: {0}")]
    BaseMatrix(String),

    #[error("unsupported channel for {op}: {channel}")]
    UnsupportedChannel { op: &'static str, channel: String },

    /// A state-evolution denominator (expected derivative) vanished.
    #[error("degenerate state evolution at iteration {iteration}, block {block}: {what}")]
    Degenerate {
        iteration: usize,
        block: usize,
        what: String,
    },

    #[error("non-finite iterate at iteration {iteration}, block {block}: {what}")]
    NonFinite {
        iteration: usize,
        block: usize,
        what: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
