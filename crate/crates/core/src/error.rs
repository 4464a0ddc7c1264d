use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error at row {row}: {message}")]
    Ingest { row: u64, message: String },

    #[error("alignment error: asset `{asset}` has no close for {date}")]
    Alignment { date: String, asset: String },

    #[error("window error: t = {t} requires t >= window + 1 = {required}")]
    Window { t: usize, required: usize },

    #[error("series too short: need at least {required} closes, have {actual}")]
    SeriesTooShort { required: usize, actual: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFinite { block: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
