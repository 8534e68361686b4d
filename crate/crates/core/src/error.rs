use thiserror::Error;

#[derive(Debug, Error)]
pub enum OmrError {
    #[error("XML error at line {line}, column {column}: {message}")]
    Xml { line: u32, column: u32, message: String },

    #[error("malformed node at line {line}: {message}")]
    MalformedNode { line: u32, message: String },

    #[error("unknown class name '{0}'")]
    UnknownClass(String),

    #[error("node {from} has an outlink to node {to}, which does not exist")]
    DanglingLink { from: u32, to: u32 },

    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),

    #[error("detections line {line}: {message}")]
    Detections { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vocabulary size mismatch: expected {expected} classes, found {found}")]
    VocabMismatch { expected: usize, found: usize },

    #[error("document mismatch: {0}")]
    DocumentMismatch(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite gradient in parameter block '{0}'")]
    NonFiniteGradient(String),

    #[error("non-finite training loss: {0}")]
    NonFiniteLoss(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("no candidate pairs: {0}")]
    EmptyCandidates(String),

    #[error("instance too large for exhaustive search: smaller side is {0}, limit is 10")]
    TooLarge(usize),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OmrError>;
