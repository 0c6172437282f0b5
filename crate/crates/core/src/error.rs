use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("placement of {kind} (organ {organ}) failed after {attempts} attempts")]
    PlacementFailed {
        organ: usize,
        kind: &'static str,
        attempts: usize,
    },

    #[error("empty voxel set in overlap test")]
    EmptyVoxelSet,

    #[error("instance {0} has no surface points")]
    EmptyInstance(usize),

    #[error("instance {0} has a zero extent")]
    DegenerateInstance(usize),

    #[error("instance {0} is not a fruit")]
    NotAFruit(usize),

    #[error("unknown instance id {0}")]
    UnknownInstance(usize),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("probability out of range in {context}: {value}")]
    Probability { context: &'static str, value: f64 },

    #[error("camera standoff {standoff} m does not clear the scene bounding sphere ({radius} m)")]
    StandoffTooSmall { standoff: f64, radius: f64 },

    #[error("label sets differ; missing keys: {0:?}")]
    KeyMismatch(Vec<String>),

    #[error("malformed file {path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("weight file: {0}")]
    Weights(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a file name unless the error already carries one.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Malformed { .. } | Error::Io { .. } | Error::InFile { .. }) => e,
            e => Error::InFile {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }
}
