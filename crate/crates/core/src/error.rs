use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate geometry: {0}")]
    Geometry(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient at {0}")]
    NonFinite(String),
    #[error("backward called without a cached forward pass")]
    NoForward,
    #[error("constraint {eq} violated: {msg}")]
    Constraint { eq: &'static str, msg: String },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("bad snapshot: {0}")]
    Snapshot(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
