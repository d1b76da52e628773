use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two distributions (or a scheme and a channel) use different alphabets.
    #[error("alphabet mismatch: {left} vs {right} symbols")]
    AlphabetMismatch { left: usize, right: usize },

    /// An exact computation would exceed the configured work budget.
    #[error("resource budget exceeded: {needed} evaluations requested, limit is {limit}")]
    Budget { needed: u128, limit: u128 },

    /// Belief propagation received certain evidence for both labels.
    #[error("contradictory evidence: BP denominator vanished")]
    ContradictoryEvidence,

    /// A scheme or input document could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
