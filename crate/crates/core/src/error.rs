use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("domain violation in {0}")]
    Domain(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape already consumed; build it with Tape::retaining() to call backward twice")]
    TapeConsumed,
    #[error("tape is empty")]
    EmptyTape,
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("parameter `{0}` has a non-finite gradient")]
    NonFiniteGrad(String),
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("episode is over; reset before stepping")]
    EpisodeOver,
    #[error("malformed file: {0}")]
    Format(String),
    #[error("bound violated: {0}")]
    BoundViolation(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
