use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),

    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("failed to encode {path}: {message}")]
    Encode { path: PathBuf, message: String },

    #[error("image has zero size")]
    EmptyImage,

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("crop size {size} exceeds image size {height}x{width}")]
    CropTooLarge {
        size: usize,
        height: usize,
        width: usize,
    },

    #[error("no common image ids between {low} and {high}")]
    EmptyIntersection { low: PathBuf, high: PathBuf },

    #[error("id mismatch: only in first set {only_first:?}, only in second set {only_second:?}")]
    IdMismatch {
        only_first: Vec<String>,
        only_second: Vec<String>,
    },

    #[error("spatial size {height}x{width} is not a positive multiple of 8")]
    SpatialSize { height: usize, width: usize },

    #[error("expected {expected} channels, got {actual}")]
    ChannelCount { expected: usize, actual: usize },

    #[error("non-finite loss at step {step}: {constituent} = {value}")]
    NonFiniteLoss {
        step: u64,
        constituent: &'static str,
        value: f64,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt NIQE model: {0}")]
    CorruptNiqeModel(String),

    #[error("need at least {needed} images, found {found}")]
    TooFewImages { needed: usize, found: usize },

    #[error("too few usable patches: {found} (need {needed})")]
    TooFewPatches { needed: usize, found: usize },

    #[error("image {height}x{width} is too small (need at least {min}x{min})")]
    ImageTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
