use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("target values must be exactly 0 or 1 (found {0})")]
    NonBinaryTarget(f64),

    #[error("probability out of [0, 1]: {0}")]
    OutOfRange(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("image format: {0}")]
    Image(#[from] ImageError),

    #[error("checkpoint format: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("bad magic {0:?}, expected P5 or P6")]
    BadMagic(String),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("cannot encode {0} channels (1 or 3 supported)")]
    Channels(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, expected \"GPUN\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u32),
    #[error("dtype mismatch: file holds {found}, caller requested {expected}")]
    DtypeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("truncated file while reading {0}")]
    Truncated(&'static str),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has dims {found:?}, model expects {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unexpected tensor `{0}`")]
    UnexpectedTensor(String),
    #[error("invalid model metadata: {0}")]
    Meta(String),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
}
