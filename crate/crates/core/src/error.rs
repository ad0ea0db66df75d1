use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::CropName;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("alignment is degenerate: anchor landmarks are collinear or coincident")]
    AlignmentDegenerate,

    #[error("unknown crop name `{0}`")]
    UnknownCrop(String),

    #[error("crop `{0}` is missing from the crop set")]
    MissingCrop(CropName),

    #[error("crop `{0}` appears more than once")]
    DuplicateCrop(CropName),

    #[error("vertex is behind the camera (depth {depth:e})")]
    BehindCamera { depth: f64 },

    #[error("degenerate landmark configuration: {0}")]
    DegenerateLandmarks(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("cannot normalize a zero-norm embedding")]
    ZeroNorm,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("no coefficient entry for frame `{0}`")]
    MissingCoefficients(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit status used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
