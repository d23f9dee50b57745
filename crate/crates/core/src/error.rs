use colma_storage::StorageError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("version conflict: current version is {current}")]
    VersionConflict { current: u32 },
    #[error("embedding dimension {got} does not match namespace dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("undefined direction: zero-norm vector")]
    UndefinedDirection,
    #[error("unknown record {0}")]
    UnknownRecord(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid triple: {0}")]
    InvalidTriple(String),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("invalid cue: {0}")]
    InvalidCue(String),
    #[error("malformed proposal: {0}")]
    InvalidProposal(String),
    #[error("invalid namespace name {0:?}")]
    InvalidNamespace(String),
    #[error("namespace {0:?} is not empty")]
    DirtyNamespace(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("{0} is disabled in this build")]
    Disabled(&'static str),
    #[error("import: {0}")]
    Import(String),
    #[error("scenario assertion failed: {0}")]
    Scenario(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
