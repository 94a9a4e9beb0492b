use thiserror::Error;

/// Errors surfaced by the registration library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two fields that must live on the same grid do not.
    #[error("grid mismatch: {left:?} vs {right:?}")]
    GridMismatch { left: [usize; 3], right: [usize; 3] },

    /// A grid with invalid dimensions (odd, or fewer than 4 points per axis).
    #[error("invalid grid dims {dims:?}: each axis must be even and >= 4")]
    InvalidGrid { dims: [usize; 3] },

    /// A scalar parameter outside its admissible range.
    #[error("invalid parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    /// Non-finite value in an input that must be finite.
    #[error("non-finite input in {context}")]
    NonFiniteInput { context: &'static str },

    /// Task partition does not divide the grid.
    #[error("partition {p1}x{p2} does not divide grid axes {n1}x{n2}")]
    InvalidPartition { p1: usize, p2: usize, n1: usize, n2: usize },

    /// A departure point's interpolation stencil reaches outside the ghost
    /// layer of the task that owns it.
    #[error("interpolation stencil exceeds ghost width (cell {cell:?})")]
    StencilExceedsGhosts { cell: [usize; 3] },

    /// Time series length does not match the expected number of steps.
    #[error("time series has {got} slices, expected {expected}")]
    SeriesLength { got: usize, expected: usize },

    /// A solver operation was invoked before its prerequisite ran.
    #[error("missing cached {what}: run the prerequisite evaluation first")]
    MissingCache { what: &'static str },

    /// An empty or non-decreasing continuation schedule.
    #[error("invalid beta schedule: {reason}")]
    InvalidSchedule { reason: &'static str },
}

pub type Result<T> = core::result::Result<T, Error>;
