use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("no points")]
    NoPoints,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty sub-cloud")]
    EmptySubCloud,

    #[error("labeled pool has no clicks")]
    EmptyPool,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at cycle {cycle}, epoch {epoch}, step {step}: {snapshot}")]
    NonFiniteLoss {
        cycle: usize,
        epoch: usize,
        step: usize,
        snapshot: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
