//! Error types shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum SmmError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("NaN loss at iteration {iteration} ({loss_name})")]
    NanLoss { iteration: u64, loss_name: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward already called on this tape")]
    DoubleBackward,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SmmError>;
