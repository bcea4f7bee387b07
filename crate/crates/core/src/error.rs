use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("{what} of size {size} exceeds the supported limit {limit}")]
    Capacity {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("invalid value: {0}")]
    InvalidArgument(String),

    #[error("clause width {width} is not supported (maximum {max})")]
    UnsupportedWidth { width: usize, max: usize },

    #[error("requested {requested} distinct clauses but only {available} exist")]
    InfeasibleDensity { requested: u128, available: u128 },

    #[error("instance generation failed for n = {n}: {accepted} of {wanted} accepted after {draws} draws")]
    GenerationFailure {
        n: usize,
        accepted: usize,
        wanted: usize,
        draws: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing stage output {path}: run `{stage}` first")]
    MissingStage { stage: &'static str, path: PathBuf },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
