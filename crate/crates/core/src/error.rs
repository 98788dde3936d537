//! Error type shared by all pipeline stages.

use std::path::PathBuf;

/// Errors produced by cloud ingestion, fitting, interpolation and export.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("grid spacing must be positive, got ({0}, {1})")]
    NonPositiveSpacing(f64, f64),

    #[error("point ({x}, {y}) falls outside the {nx}x{ny} grid")]
    PointOutsideGrid { x: f64, y: f64, nx: usize, ny: usize },

    #[error("no ground data: every cell of the grid is a hole")]
    NoGroundData,

    #[error("query ({0}, {1}) is outside the surface domain")]
    OutsideDomain(f64, f64),

    #[error("surface grid still contains {0} holes")]
    GridHasHoles(usize),

    #[error("interpolation sites {0} and {1} coincide (distance {2:.3e})")]
    DuplicateSites(usize, usize, f64),

    #[error("linear system is singular")]
    SingularSystem,

    #[error("linear system is too ill-conditioned (estimate {0:.3e})")]
    IllConditioned(f64),

    #[error("system of {unknowns} unknowns exceeds the dense-solver guard of {limit}")]
    SystemTooLarge { unknowns: usize, limit: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
