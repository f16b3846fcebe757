use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("invalid pool set: {}", .0.join("; "))]
    InvalidPools(Vec<String>),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("empty sequence: attention pooling needs at least one frame")]
    EmptySequence,

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("invalid pair: {0}")]
    InvalidPair(String),

    #[error("non-finite value in `{block}`")]
    Numeric { block: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("joint action space has {count} combinations, above the cap of {cap}")]
    CapExceeded { count: u64, cap: u64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
