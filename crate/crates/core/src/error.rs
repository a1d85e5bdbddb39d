use thiserror::Error;

use crate::geometry::GeometryError;
use crate::graph::GraphError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{layer}: expected {expected} input channels, got {actual}")]
    ChannelMismatch {
        layer: String,
        expected: usize,
        actual: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pyramid level {level} is empty")]
    EmptyLevel { level: usize },
    #[error("{count} points were not covered by any voting sphere")]
    Uncovered { count: usize },
    #[error("no non-empty crop after {attempts} attempts")]
    CropRetriesExhausted { attempts: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
