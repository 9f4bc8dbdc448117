use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("contrastive regularizer enabled but no prototype pool supplied")]
    MissingPool,

    #[error("malformed data file: {0}")]
    Format(String),

    #[error("degenerate partition: a client had no training or test samples after {attempts} attempts")]
    DegeneratePartition { attempts: usize },

    #[error("non-finite loss at round {round}, client {client}, batch {batch}")]
    NonFinite { round: usize, client: usize, batch: usize },

    #[error("config schema violation: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
