use std::path::PathBuf;

use thiserror::Error;

use crate::geotile::TileId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tile {zoom}/{x}/{y}")]
    InvalidTile { zoom: u8, x: u32, y: u32 },

    #[error("invalid quadkey {0:?}")]
    InvalidQuadkey(String),

    #[error("tile {0} is at the coarsest modeled zoom and has no parent")]
    ZoomFloor(TileId),

    #[error("tile {0} is at the finest modeled zoom and has no children")]
    ZoomCeiling(TileId),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tile universes differ: {0}")]
    TileMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("unknown {kind} {name:?}")]
    Unknown { kind: &'static str, name: String },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv { path: path.into(), source }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data { path: path.into(), message: message.into() }
    }

    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to bad arguments or numerical failures.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data { .. }
                | Error::Io { .. }
                | Error::Csv { .. }
                | Error::InvalidQuadkey(_)
                | Error::TileMismatch(_)
                | Error::Empty(_)
        )
    }
}
