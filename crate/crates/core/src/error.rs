use thiserror::Error;

#[derive(Debug, Error)]
pub enum QttError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dense materialization of {0} entries exceeds the 2^24 limit")]
    DenseTooLarge(usize),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    Invalid(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("serialization: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QttError>;
