//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong length for the operation.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Invalid configuration; the message names the offending field(s).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A numerical precondition failed (non-finite input, NaN weights, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation that requires data received none.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// Malformed dataset or log file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Failure inside a client update, tagged with its round and client id.
    #[error("round {round}, client {client}: {source}")]
    Client {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },

    /// Failure inside the round loop, tagged with the round.
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }

    pub fn in_client(self, round: usize, client: usize) -> Self {
        Error::Client {
            round,
            client,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
