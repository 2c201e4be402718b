//! Crate-wide error type.
//!
//! Construction and configuration problems are reported through [`Error`];
//! dimension contracts on hot kernels (`spmv`, triangular solves, masked
//! accumulation) are `assert!`ed instead, since violating them is a
//! programming error rather than a recoverable condition.

use std::time::Duration;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All recoverable errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or vector was built from inconsistent pieces.
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    /// Factorization hit a pivot that is zero relative to its row.
    #[error("matrix is numerically singular at pivot {row} (|pivot| = {pivot:.3e})")]
    Singular { row: usize, pivot: f64 },

    /// Mesh resolution too small to produce any interior unknowns.
    #[error("mesh size n = {0} has no interior vertices; need n >= 2")]
    MeshTooSmall(usize),

    /// A partition request that cannot be honored.
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    /// Overlap extension requires depth >= 1 so that owned unknowns are
    /// interior to their subdomain.
    #[error("overlap depth must be at least 1")]
    ZeroOverlap,

    /// No admissible coarse grid size exists for the requested fine grid.
    #[error("no coarse grid size divides fine grid n = {n}")]
    NoFeasibleCoarseGrid { n: usize },

    /// Out-of-range window access.
    #[error("window access out of bounds: offset {offset} + len {len} exceeds window size {size}")]
    WindowOutOfBounds {
        offset: usize,
        len: usize,
        size: usize,
    },

    /// Access to a window whose exposure epoch has been closed.
    #[error("window epoch is closed")]
    EpochClosed,

    /// A collective operation (barrier) did not complete in time.
    #[error("collective operation timed out after {0:?}")]
    CollectiveTimeout(Duration),

    /// A NaN or infinity showed up where finite data is required.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Invalid solver or experiment configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Invalid input to a metric computation.
    #[error("invalid metric input: {0}")]
    InvalidMetric(String),

    /// Underlying I/O failure (file formats, exports).
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Malformed external data (Matrix Market files, JSON configs).
    #[error("parse error: {0}")]
    Parse(String),
}
