use thiserror::Error;

/// Crate-wide error type.
///
/// The split matters to callers: `InvalidParameter`, `Domain`, `Parse`, and
/// `InvalidInput` are all caused by bad inputs, while `Numerical` signals an
/// internal computation that failed to meet its tolerance.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// A constructor argument violated its contract.
    #[error("{0}")]
    InvalidParameter(String),

    /// An evaluation was requested outside the supported domain.
    #[error("{0}")]
    Domain(String),

    /// A text input (Newick) failed to parse; `offset` is a byte index.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A data input (alignment, tree/alignment pairing) is malformed.
    #[error("{0}")]
    InvalidInput(String),

    /// A numerical routine failed to converge or meet its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
