use std::fmt;

use thiserror::Error;

/// Tensor axis named in index errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Node,
    Label,
    Epoch,
    Cluster,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Dimension::Node => "node",
            Dimension::Label => "label",
            Dimension::Epoch => "epoch",
            Dimension::Cluster => "cluster",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{dim} index {index} out of range (extent {extent})")]
    IndexOutOfRange {
        dim: Dimension,
        index: usize,
        extent: usize,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("zero mixture probability for observation (node {node}, label {label}, epoch {epoch})")]
    DegenerateParameters {
        node: usize,
        label: usize,
        epoch: usize,
    },

    #[error("all {restarts} EM restarts hit degenerate parameters")]
    AllRestartsFailed { restarts: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("archive format: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Broad failure classes, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Contract,
    Numeric,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. } | Error::Archive(_) | Error::Json(_) | Error::Csv(_) => {
                ErrorKind::Parse
            }
            Error::DegenerateParameters { .. } | Error::AllRestartsFailed { .. } => {
                ErrorKind::Numeric
            }
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Contract,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
