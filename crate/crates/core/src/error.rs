use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x}, {y}, {w}, {h}): width and height must be finite and positive")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },

    #[error("affine map is not invertible (determinant {det:e})")]
    NonInvertible { det: f64 },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("detections span several images ({first} and {other}); group them by image first")]
    MixedImageIds { first: u64, other: u64 },

    #[error("average precision is undefined without ground-truth boxes")]
    NoGroundTruth,

    #[error("detections reference image ids absent from the annotations: {0:?}")]
    UnknownImageIds(Vec<u64>),

    #[error("augmentation produced no surviving boxes after {attempts} attempts")]
    AugmentExhausted { attempts: usize },

    #[error("{path}: malformed JSON at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem or by image codecs rather
    /// than by the content of well-formed inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Codec { .. })
    }
}
