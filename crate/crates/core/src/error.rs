use thiserror::Error;

/// Errors produced by problem construction, compression, simulation and the
/// experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("node index {index} out of range for {nodes} nodes")]
    NodeOutOfRange { index: usize, nodes: usize },

    #[error("component index {index} out of range for {components} components")]
    ComponentOutOfRange { index: usize, components: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("linear system is singular or ill-conditioned (condition estimate {0:e})")]
    IllConditioned(f64),

    #[error("malformed message: {0}")]
    MalformedMessage(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
