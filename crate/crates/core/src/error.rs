use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
    },

    #[error("unsupported {what} version {found}")]
    UnsupportedVersion { what: &'static str, found: u16 },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("payload size mismatch in {path}: header implies {expected} bytes, found {found}")]
    PayloadSize {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },

    #[error("manifest line {line}: feature file {path} not found")]
    DanglingFeature { line: usize, path: PathBuf },

    #[error("record {id}: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("record {id}: label is {label} but segment labels say {implied}")]
    MilInconsistent { id: String, label: u8, implied: u8 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityRange(f64),

    #[error("non-finite gradient in {tensor}[{index}]")]
    NonFiniteGradient { tensor: &'static str, index: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("invalid interval [{start}, {end}] for length {len}")]
    Interval {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("degenerate scored set: {0}")]
    Degenerate(String),

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
