use thiserror::Error;

/// Errors raised by the surveillance library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs are individually valid but inconsistent with each other or
    /// with the configured method.
    #[error("configuration error: {0}")]
    Config(String),

    /// The exponential tail bounds need an interior point `0 < c < n`.
    #[error("tail bounds not applicable: c = {c}, n = {n}")]
    BoundsNotApplicable { c: u64, n: u64 },

    /// A site does not hold enough history to form a baseline window.
    #[error("period {period} has only {available} of {needed} baseline periods")]
    InsufficientHistory {
        period: usize,
        available: usize,
        needed: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
