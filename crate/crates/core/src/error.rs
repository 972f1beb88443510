use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum InfiniError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("memory state does not match config: {0}")]
    StateMismatch(String),
    #[error("memory invariant violated: {0}")]
    Invariant(String),
    #[error("token id {id} out of range for vocab of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("{0}")]
    Input(String),
    #[error("{family} footprint needs parameter `{field}`")]
    MissingParameter { family: String, field: &'static str },
    #[error("non-finite loss in batch entry {batch_index}")]
    NonFiniteLoss { batch_index: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = InfiniError> = std::result::Result<T, E>;
