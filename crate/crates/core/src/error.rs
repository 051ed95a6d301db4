use std::path::PathBuf;

use crate::image::{Gamut, Transfer};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png decode error: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode error: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("expected {expected_gamut:?}+{expected_transfer:?} input, got {gamut:?}+{transfer:?}")]
    WrongTags {
        expected_gamut: Gamut,
        expected_transfer: Transfer,
        gamut: Gamut,
        transfer: Transfer,
    },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("weights file: {0}")]
    Weights(String),

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used for machine-parsable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::PngDecode(_) | Error::PngEncode(_) => "png",
            Error::UnsupportedFormat(_) => "unsupported-format",
            Error::WrongTags { .. } => "wrong-tags",
            Error::SizeMismatch(_) => "size-mismatch",
            Error::OutOfBounds(_) => "out-of-bounds",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::Parse { .. } => "parse",
            Error::Weights(_) => "weights",
            Error::NonFinite { .. } => "non-finite",
        }
    }
}
