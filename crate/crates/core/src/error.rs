use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("too few non-zero paired differences ({0}, need at least 5)")]
    TooFewSamples(usize),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("bad file size: expected {expected} bytes, found {found}")]
    BadFileSize { expected: u64, found: u64 },
    #[error("raw value {value} at index {index} exceeds 4095")]
    ValueOutOfRange { index: usize, value: u16 },
    #[error("image is not square ({height}x{width})")]
    NotSquare { height: usize, width: usize },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png decode error: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png encode error: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("unsupported png layout: {0}")]
    PngFormat(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
