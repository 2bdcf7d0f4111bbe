use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected \"UQET\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported tensor file version {0}")]
    BadVersion(u16),

    #[error("unsupported dtype code {0} (only 1 = f32 is supported)")]
    BadDtype(u8),

    #[error("unsupported rank {0} (tensor files are 3-dimensional)")]
    BadRank(u8),

    #[error("size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: u64, found: u64 },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("query {query}: target index {index} out of range (num_targets = {num_targets})")]
    IndexOutOfRange {
        query: usize,
        index: usize,
        num_targets: usize,
    },

    #[error("query {0} has no positive targets")]
    EmptyPositives(usize),

    #[error("query {query}: duplicate positive target {index}")]
    DuplicatePositive { query: usize, index: usize },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("zero-norm {side} row {row} under cosine similarity")]
    ZeroNorm { side: &'static str, row: usize },

    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),

    #[error("probability row {row} is not normalized (sum = {sum})")]
    NotNormalized { row: usize, sum: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics themselves rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
