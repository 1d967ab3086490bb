use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report.
///
/// Variants split into two families: I/O failures (the file system or an
/// unreadable image) and validation/domain failures (malformed input, values
/// outside a function's domain). [`Error::is_io`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("bad magic bytes {found:?}, expected \"CAMT\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported CAMT version {0}")]
    UnsupportedVersion(u16),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated header: {0}")]
    TruncatedHeader(&'static str),

    #[error("payload length mismatch: header declares {expected} bytes, found {found}")]
    LengthMismatch { expected: u64, found: u64 },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: &'static str },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("bundle manifest: {0}")]
    Manifest(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("patch grid {grid_h}x{grid_w} does not cover {tokens} tokens")]
    GridMismatch {
        grid_h: usize,
        grid_w: usize,
        tokens: usize,
    },

    #[error("wrong bundle kind: expected {expected}, got {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid record at row {row}: {reason}")]
    InvalidRecord { row: usize, reason: String },

    #[error("csv error: {0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for file-system level failures, false for validation and domain errors.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Image { source, .. } => matches!(source, image::ImageError::IoError(_)),
            _ => false,
        }
    }
}
