use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected \"QALN\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("unsupported tensor rank {0} (expected 2 or 3)")]
    UnsupportedRank(u32),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("trailing bytes after payload: expected {expected} bytes, found {actual}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("non-finite value at flat index {0}")]
    NonFiniteValue(usize),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("alignment matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("aggregation row {0} is empty")]
    EmptyRow(usize),
    #[error("aggregation matrix is in the {found} stage, expected {expected}")]
    WrongStage {
        expected: &'static str,
        found: &'static str,
    },
    #[error("attention row {0} collapsed to zero under contrast")]
    DegenerateRow(usize),
    #[error("index {index} out of range for {len} positions")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("empty selection: {0}")]
    EmptySelection(&'static str),
    #[error("no spatial grid attached")]
    NoGrid,
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("empty feature list")]
    EmptyList,
    #[error("mask grids differ: {0:?} vs {1:?}")]
    GridMismatch((usize, usize), (usize, usize)),
    #[error("masks have an empty union")]
    EmptyUnion,
    #[error("mask value at flat index {0} is not 0 or 1")]
    NotBinary(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// Stable variant name, used in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BadMagic(_) => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::UnsupportedDtype(_) => "UnsupportedDtype",
            Error::UnsupportedRank(_) => "UnsupportedRank",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::TrailingBytes { .. } => "TrailingBytes",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::IoFailure { .. } => "IoFailure",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::KOutOfRange { .. } => "KOutOfRange",
            Error::NonSquare { .. } => "NonSquare",
            Error::EmptyRow(_) => "EmptyRow",
            Error::WrongStage { .. } => "WrongStage",
            Error::DegenerateRow(_) => "DegenerateRow",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::EmptySelection(_) => "EmptySelection",
            Error::NoGrid => "NoGrid",
            Error::BadDimensions(_) => "BadDimensions",
            Error::EmptyList => "EmptyList",
            Error::GridMismatch(..) => "GridMismatch",
            Error::EmptyUnion => "EmptyUnion",
            Error::NotBinary(_) => "NotBinary",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Parse(_) => "Parse",
        }
    }
}
