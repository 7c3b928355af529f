use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid hand parameters: {0}")]
    InvalidParams(String),
    #[error("config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("sampling gave up after {attempts} attempts: {what}")]
    Exhausted { what: String, attempts: usize },
    #[error(transparent)]
    Nn(#[from] duohand_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
