use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric domain error: {0}")]
    Domain(String),
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;
