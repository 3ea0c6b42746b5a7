// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Bad magic bytes or an unparseable header.
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated input: expected {expected} bytes of {what}, got {found}")]
    Truncated {
        what: &'static str,
        expected: u64,
        found: u64,
    },

    /// A dump, profile or parameter set breaks one of its invariants.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no query rows")]
    NoQueryRows,

    #[error("empty profile")]
    EmptyProfile,

    #[error("basin undefined for k = {0} (need k >= 3)")]
    BasinUndefined(usize),

    #[error("degenerate positional field: variance of f_hat is zero, rho undefined")]
    DegeneratePositionalField,

    #[error("missing {0}")]
    Missing(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
