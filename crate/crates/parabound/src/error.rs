//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error("kernel evaluation: {0}")]
    Kernel(String),
    #[error("duhamel integral divergence: {0}")]
    Divergence(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("phi family: s = {s} outside the admissible interval for q = {q}")]
    PhiDomain { q: f64, s: f64 },
    #[error("solver: {0}")]
    Solver(String),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("scenario configuration: {0}")]
    Config(String),
    #[error("under-resolved: {0}")]
    UnderResolved(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
