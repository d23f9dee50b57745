use thiserror::Error;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("integrity error in {file}: {reason}")]
    Integrity { file: String, reason: String },

    #[error("store is closed")]
    Closed,

    #[error("cell value of {size} bytes exceeds the {limit} byte limit")]
    CellTooLarge { size: usize, limit: usize },

    #[error("invalid cell: {0}")]
    InvalidCell(String),

    #[error("invalid partition key: {0}")]
    InvalidKey(String),

    #[error("invalid ring configuration: {0}")]
    InvalidRing(String),
}

impl StorageError {
    pub(crate) fn integrity(file: impl Into<String>, reason: impl Into<String>) -> Self {
        StorageError::Integrity {
            file: file.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, StorageError>;
