use thiserror::Error;

/// Errors raised while building or applying a hierarchical representation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two distinct particles sit at (numerically) the same location, so the
    /// kernel entry between them is not finite.
    #[error("degenerate geometry: particles {i} and {j} are coincident (r = {distance:e})")]
    DegenerateGeometry { i: usize, j: usize, distance: f64 },

    #[error("octree depth would exceed the cap of {cap} levels (largest cluster has {largest} particles)")]
    DepthExceeded { cap: usize, largest: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// A time budget set through the options ran out.
    #[error("deadline exceeded after {elapsed_s:.1} s")]
    DeadlineExceeded { elapsed_s: f64 },

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}
