use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum IceError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("grid longitudes must be even for the polar fold, got {0}")]
    OddLongitudes(usize),

    #[error("all cells are masked")]
    AllMasked,

    #[error("empty split `{split}`: boundary month {boundary} leaves no (init, lead) pairs")]
    EmptySplit { split: String, boundary: i32 },

    #[error("empty climatology stratum at target month {month}, lead {lead}")]
    EmptyStratum { month: u32, lead: u32 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },

    #[error("version mismatch: file version {got}, supported version {supported}")]
    VersionMismatch { got: u32, supported: u32 },

    #[error("lead {0} out of range 1..=12")]
    LeadOutOfRange(u32),

    #[error("empty pool: no samples selected")]
    EmptyPool,

    #[error("degenerate forecast: zero error at every cell")]
    DegenerateForecast,

    #[error("zero variance in map at init {t}, lead {l}")]
    ZeroVariance { t: i32, l: u32 },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IceError>;
