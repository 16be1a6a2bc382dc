use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("step too coarse: dt = {dt} ns exceeds limit {limit} ns")]
    Resolution { dt: f64, limit: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("normalization failed: {0}")]
    Normalization(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("model validity: {0}")]
    ModelValidity(String),

    #[error("overlap ambiguity: {0}")]
    OverlapAmbiguity(String),

    #[error("visibility undefined: {0}")]
    UndefinedVisibility(String),

    #[error("degenerate herald: {0}")]
    DegenerateHerald(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
