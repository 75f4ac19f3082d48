use thiserror::Error;

/// Errors produced by the co-design engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty source: {0}")]
    EmptySource(&'static str),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension { expected, actual })
    }
}
