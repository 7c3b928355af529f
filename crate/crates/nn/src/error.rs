use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss must be a 1x1 scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("weights file: {0}")]
    Format(String),
    #[error("weights file checksum mismatch")]
    Checksum,
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
