// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

/// Every fallible operation in the crate returns this error.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// Malformed FEN record. `field` is the 1-based FEN field index.
    #[error("FEN parse error in field {field}: {message}")]
    Fen { field: usize, message: String },

    #[error("bad square name {0:?}")]
    SquareName(String),

    #[error("bad UCI move {0:?}")]
    Uci(String),

    #[error("illegal move {uci} in position {fen}")]
    IllegalMove { uci: String, fen: String },

    #[error("position has no legal moves (checkmate or stalemate)")]
    Terminal,

    /// Input encoding does not match the model's expectations.
    #[error("input layout mismatch: {0}")]
    Layout(String),

    /// Problem reading or validating a tensor archive; `tensor` names the
    /// offending entry when there is one.
    #[error("weight archive error{}: {message}", tensor.as_deref().map(|t| format!(" ({t})")).unwrap_or_default())]
    Archive {
        tensor: Option<String>,
        message: String,
    },

    #[error("inconsistent model spec: {0}")]
    Spec(String),

    #[error("invalid hook: {0}")]
    Hook(String),

    /// NaN or Inf in the activations; layer is 1-based, 0 means the embedding.
    #[error("non-finite activation after layer {layer} ({stage})")]
    NumericFault { layer: usize, stage: &'static str },

    #[error("cannot build synthetic model: {0}")]
    Plant(String),

    #[error("invalid site: {0}")]
    Site(String),

    #[error("degenerate puzzle {id}: {reason}")]
    Degenerate { id: String, reason: String },

    #[error("no tagged heads for piece kind {0}")]
    NoTaggedHeads(String),

    #[error("no corruption survived the filters")]
    NoCorruption,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("probe error: {0}")]
    Probe(String),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn archive(tensor: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Archive {
            tensor: Some(tensor.into()),
            message: message.into(),
        }
    }

    pub(crate) fn archive_general(message: impl Into<String>) -> Self {
        Error::Archive {
            tensor: None,
            message: message.into(),
        }
    }
}
