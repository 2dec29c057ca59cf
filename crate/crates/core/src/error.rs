use std::path::PathBuf;

use thiserror::Error;

use crate::jacobian::CacheOrder;
use crate::scene::Layout;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene has no gaussians")]
    EmptyScene,

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("degenerate dataset spec: {0}")]
    DegenerateSpec(String),

    #[error("expected {expected:?} layout, got {found:?}")]
    WrongLayout { expected: Layout, found: Layout },

    #[error("expected cache in {expected:?} order, got {found:?}")]
    WrongCacheOrder {
        expected: CacheOrder,
        found: CacheOrder,
    },

    #[error("length mismatch for {what}: expected {expected}, got {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dense jacobian would hold {entries} entries (limit {limit})")]
    OracleTooLarge { entries: usize, limit: usize },

    #[error("PCG lost positive definiteness at iteration {iteration}: p^T g = {curvature:e}")]
    PcgBreakdown { iteration: usize, curvature: f64 },

    #[error("damping exceeded lambda_max = {lambda_max:e} while retrying PCG")]
    DampingExhausted { lambda_max: f64 },

    #[error("gradient cache needs {needed} bytes, budget is {budget}")]
    CacheBudget { needed: usize, budget: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
