//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input line (corpus, template list, ordering file).
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Label inconsistency (unknown label during validation, missing gold, ...).
    #[error("label error: {0}")]
    Label(String),

    /// A corpus with zero sentences where at least one is required.
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Corrupt or incompatible model file.
    #[error("model format error: {0}")]
    Format(String),

    /// Internal consistency violation; indicates a bug, not bad input.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
