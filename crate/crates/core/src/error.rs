use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("invalid gazetteer line {line}: {reason}")]
    Gazetteer { line: usize, reason: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("dimension mismatch: model has {expected} dims, vector has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("need at least {required} items per set, got {actual}")]
    TooFewSamples { required: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gold pool is empty but gold ratio is {0}")]
    EmptyGoldPool(f64),

    #[error("empty date range")]
    EmptyRange,

    #[error("series too short: {actual} days, need at least {required}")]
    SeriesTooShort { required: usize, actual: usize },

    #[error("insufficient history: need {required} prior observations, index {index} has {available}")]
    InsufficientHistory {
        required: usize,
        index: usize,
        available: usize,
    },

    #[error("IRLS did not converge after {iterations} iterations (last deviance {deviance})")]
    NonConvergence { iterations: usize, deviance: f64 },

    #[error("topic count {topics} exceeds vocabulary size {vocab}")]
    TooManyTopics { topics: usize, vocab: usize },

    #[error("unknown preset {name:?}; available: {available}")]
    UnknownPreset { name: String, available: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
