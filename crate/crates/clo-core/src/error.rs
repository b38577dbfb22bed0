//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value; the message names the violated bound.
    #[error("configuration error: {0}")]
    Config(String),

    /// A sequence handed to `translate` contained a token outside the
    /// source language's range.
    #[error("mixed-language input: token {token} at position {position} is outside the source range")]
    MixedLanguage { token: u32, position: usize },

    /// Language detection on a sequence with no non-special tokens.
    #[error("language indeterminate: no non-special tokens")]
    IndeterminateLanguage,

    /// A dataset record or file failed an internal consistency check.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Dataset file written by an incompatible schema.
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    /// A batch is missing one direction of a cross-lingual pair.
    #[error("batch pairing violated: {0}")]
    Pairing(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss {value} at step {step}")]
    NonFinite { step: usize, value: f64 },

    /// Backward called on a node that does not belong to the graph.
    #[error("autodiff error: {0}")]
    Autodiff(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
