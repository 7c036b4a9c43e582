use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: timestamp {timestamp} precedes previous timestamp {previous}")]
    Ordering {
        line: usize,
        timestamp: i64,
        previous: i64,
    },

    #[error("window [{start}, {end}] does not cover telegram at {timestamp}")]
    Window { start: i64, end: i64, timestamp: i64 },

    #[error("invalid device catalog: {0}")]
    Catalog(String),

    #[error("invalid simulator config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("cycle [{start_k}, {end_k}] out of range for series of length {len}")]
    CycleRange {
        start_k: usize,
        end_k: usize,
        len: usize,
    },

    #[error("not enough data: {0}")]
    TooFewRows(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
