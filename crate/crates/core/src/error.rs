//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldkitError {
    /// A caller supplied an argument outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Array shapes do not line up (reported with the offending dims).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A supervision mask with no positive pixel reached the loss.
    #[error("unsupervisable batch: supervision mask has no positive pixel ({0})")]
    UnsupervisableBatch(String),

    /// Training produced a non-finite loss; diagnostic carries batch id and
    /// parameter norms so the failing step can be reproduced.
    #[error("non-finite loss at {context}: {diagnostic}")]
    NonFiniteLoss { context: String, diagnostic: String },

    /// Checkpoint/network channel disagreement without an adapter policy.
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),

    /// Instance raster violated a structural invariant.
    #[error("invalid instance map: {0}")]
    InvalidInstanceMap(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("{0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, FieldkitError>;
