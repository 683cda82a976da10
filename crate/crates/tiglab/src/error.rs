//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants carry enough
//! context (line numbers, field paths, offending dimensions) for a caller to
//! report the failure without re-deriving it.

use thiserror::Error;

/// Unified error type for dataset, model, and experiment operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying I/O failure (file missing, unreadable, ...).
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A dataset line could not be parsed. `line` is 1-based and counts the
    /// header, so the first data row is line 2.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A dataset or stream contained no events.
    #[error("empty stream: {0}")]
    EmptyStream(String),

    /// Tensor dimensions disagree with what an operation requires.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: String,
        got: String,
    },

    /// A configuration value failed validation. `field` is the dotted path
    /// into the config document (e.g. `split.fractions`).
    #[error("invalid config at `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    /// A split, mask, or stage request is inconsistent with the data.
    #[error("invalid split: {0}")]
    InvalidSplit(String),

    /// A checkpoint could not be decoded or fails its integrity checks.
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    /// A checkpoint was produced under a different configuration. Loading
    /// stops unless the caller explicitly forces it.
    #[error("config hash mismatch: checkpoint has {found}, current config is {expected} (use force to override)")]
    ConfigHashMismatch { expected: String, found: String },

    /// An experiment asked for an operation its inputs cannot support
    /// (unknown sweep axis, empty evaluation set, ...).
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    /// A failure tagged with the pipeline stage it occurred in (`data`,
    /// `pretrain`, `adapt`, `eval`, `artifacts`), so runners can report
    /// where a run died.
    #[error("[{stage}] {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Convenience constructor for [`Error::Io`].
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap this error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, unwrapping any stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
