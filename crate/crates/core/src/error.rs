use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),

    #[error("bad magic")]
    BadMagic,

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),

    #[error("truncated tensor `{0}`")]
    TruncatedTensor(String),

    #[error("truncated file")]
    TruncatedFile,

    #[error("duplicate tensor name `{0}`")]
    DuplicateTensor(String),

    #[error("weights do not match configuration: {0}")]
    WeightMismatch(String),

    #[error("zero reference signal")]
    ZeroReference,

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("silent component: {0}")]
    SilentComponent(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("external tool failed: {0}")]
    External(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
