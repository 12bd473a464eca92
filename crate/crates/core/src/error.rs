use thiserror::Error;

/// Crate-wide error type.
///
/// Shape mismatches inside tensor expressions are programmer errors and
/// panic with a message naming the op and both shapes (like `ndarray`);
/// everything driven by user input or I/O surfaces here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown entity id {0}")]
    UnknownEntity(usize),

    #[error("topic entity list is empty")]
    NoTopicEntities(),

    #[error("subgraph has no facts")]
    EmptySubgraph,

    #[error("subgraph already contains inverse facts")]
    AlreadyAugmented,

    #[error("question has no tokens")]
    EmptyQuestion,

    #[error("answer set is empty")]
    EmptyAnswerSet,

    #[error("parameter {0:?} registered twice")]
    DuplicateParameter(String),

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("{path}:{line}: malformed example: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("synthetic generation gave up after {0} retries")]
    GenerationRetryExhausted(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
