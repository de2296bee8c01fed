use thiserror::Error;

/// Errors surfaced to local callers.
///
/// None of these are ever reflected onto the wire: a server that hits a
/// protocol error goes silent rather than answering.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("invalid key length: expected {expected} bytes, got {actual}")]
    InvalidKeyLength { expected: usize, actual: usize },

    #[error("handshake padding of {0} bytes exceeds the {max} byte bound", max = crate::handshake::MAX_HANDSHAKE_PADDING)]
    PaddingOutOfRange(usize),

    #[error("message body of {0} bytes exceeds the {max} byte limit", max = crate::framing::MAX_BODY_LEN)]
    OversizeMessage(usize),

    #[error("malformed message: {0}")]
    MalformedMessage(&'static str),

    #[error("message authentication failed")]
    BadMac,

    #[error("session is poisoned")]
    Poisoned,

    #[error("descriptor: {0}")]
    Descriptor(String),

    #[error("ticket store: {0}")]
    TicketStore(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("statistics: {0}")]
    Stats(&'static str),

    #[error("I/O: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
