use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("edge on line {line} references unknown node id {id:?}")]
    UnknownNode { line: usize, id: String },
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("duplicate edge ({member:?}, {job:?})")]
    DuplicateEdge { member: String, job: String },
    #[error("node {node:?}: {channel} index {index} out of range (dim {dim})")]
    IndexOutOfRange {
        node: String,
        channel: String,
        index: usize,
        dim: usize,
    },
    #[error("invalid node {0}")]
    InvalidNode(String),
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite gradient in tensor {0:?}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("checkpoint incompatible with graph: {0}")]
    Incompatible(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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
}
