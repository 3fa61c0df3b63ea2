use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by parsing, validation, and numeric routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A dataset line could not be decoded.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An input violated a domain invariant.
    #[error("{0}")]
    Validation(String),

    /// An argument was outside a function's contract.
    #[error("{0}")]
    Argument(String),

    /// More ground-truth instances than predictions; matching is one-to-one.
    #[error("{gts} ground-truth instances exceed {preds} predictions; raise the query count")]
    Capacity { gts: usize, preds: usize },

    /// Two tensor shapes were incompatible for an operation.
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
