use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameter mismatch at `{name}`: {reason}")]
    ParamMismatch { name: String, reason: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("unknown raw class `{0}`")]
    UnknownClass(String),

    #[error("unknown class directory {0}")]
    UnknownClassDir(PathBuf),

    #[error("test environment {requested} not present; available: {available:?}")]
    MissingEnvironment { requested: u32, available: Vec<u32> },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("{path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("empty training split")]
    EmptyTrainSplit,

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid_shape(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            reason: reason.into(),
        }
    }
}

/// Failures while decoding a checkpoint file. Each corruption mode is distinct
/// so callers (and tests) can tell them apart.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, expected \"CSAB\"")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("malformed checkpoint header: {0}")]
    Header(String),

    #[error("tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    TensorSizeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("{0} trailing bytes after last tensor")]
    TrailingBytes(usize),
}
