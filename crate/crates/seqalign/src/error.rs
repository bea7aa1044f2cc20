//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: expected {expected} tab-separated fields, found {found}")]
    MalformedLine {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: input is empty")]
    EmptyInput { path: String },

    #[error("unknown entity '{name}' in {context}")]
    UnknownEntity { name: String, context: String },

    #[error("unknown entity id {id} in {context}")]
    UnknownEntityId { id: u32, context: String },

    #[error("duplicate {side} entity '{name}' in alignment (ground truth must be 1-to-1)")]
    DuplicateAlignment { side: &'static str, name: String },

    #[error("embedding for entity '{name}' missing from {path}")]
    MissingEmbedding { name: String, path: String },

    #[error("{context}: expected {expected} values, found {found}")]
    LengthMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("{context}: non-finite value at {location}")]
    NonFinite { context: String, location: String },

    #[error("shape mismatch in {context}: {details}")]
    ShapeMismatch { context: String, details: String },

    #[error("zero-norm vector: cosine similarity undefined")]
    ZeroNorm,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("environment protocol violation: {0}")]
    Protocol(String),

    #[error("non-finite gradient in tensor '{tensor}'")]
    NonFiniteGradient { tensor: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint dimensions ({dim}, {hidden}, {layers}) do not match embeddings (dim {expected})")]
    DimensionMismatch {
        dim: usize,
        hidden: usize,
        layers: usize,
        expected: usize,
    },

    #[error("assignment oracle limited to matrices with min side <= {max}, got {rows}x{cols}")]
    OracleTooLarge {
        max: usize,
        rows: usize,
        cols: usize,
    },
}

impl Error {
    /// Process exit code: 2 for configuration/IO problems, 1 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. }
            | Error::MalformedLine { .. }
            | Error::EmptyInput { .. }
            | Error::UnknownEntity { .. }
            | Error::DuplicateAlignment { .. }
            | Error::MissingEmbedding { .. }
            | Error::LengthMismatch { .. }
            | Error::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
