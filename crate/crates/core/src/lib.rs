//! Large-deformation diffeomorphic image registration on periodic grids.
//!
//! The registration problem is posed as PDE-constrained optimal control: find
//! a stationary velocity field whose flow transports the template image onto
//! the reference image, balancing image mismatch against a biharmonic
//! smoothness seminorm, optionally constrained to divergence-free (volume
//! preserving) velocities. Spatial operators are spectral (FFT), transport is
//! a second-order semi-Lagrangian scheme with tricubic interpolation, and the
//! outer solver is a preconditioned inexact (Gauss-)Newton-Krylov method.
//!
//! Module map:
//! - [`grid`]: periodic grid, scalar/vector fields, time series, inner products
//! - [`spectral`]: FFT-based differential and pseudo-differential operators
//! - [`interp`]: tricubic interpolation and the virtual pencil-partition harness
//! - [`transport`]: semi-Lagrangian solves for state, adjoint, and their
//!   linearizations, plus deformation-map recovery
//! - [`optimizer`]: objective, reduced gradient, Hessian matvec, PCG, Newton loop
//! - [`problems`]: synthetic benchmark, image preprocessing, quality metrics
//! - [`cost_model`]: analytic cost predictions and operation-count checks

pub mod bandlimited;
pub mod counters;
pub mod cost_model;
pub mod error;
pub mod grid;
pub mod interp;
pub mod optimizer;
pub mod problems;
pub mod rng;
pub mod spectral;
pub mod transport;

pub use counters::{CounterSnapshot, OpCounters};
pub use error::{Error, Result};
pub use grid::{Grid, ScalarField, TimeSeries, VectorField};

use std::sync::Arc;

/// Shared operator context: FFT plans, the partition harness, and the
/// operation counters they both report into. One instance per grid and task
/// layout; everything downstream (transport solves, optimizer) borrows it.
pub struct Operators {
    pub spectral: spectral::SpectralOps,
    pub interp: interp::Interpolator,
    counters: Arc<OpCounters>,
}

impl Operators {
    pub fn new(partition: interp::PencilPartition) -> Self {
        let counters = Arc::new(OpCounters::new());
        Self {
            spectral: spectral::SpectralOps::new(partition.grid(), counters.clone()),
            interp: interp::Interpolator::new(partition, counters.clone()),
            counters,
        }
    }

    /// Single-task layout.
    pub fn serial(grid: Grid) -> Self {
        Self::new(interp::PencilPartition::serial(grid))
    }

    pub fn grid(&self) -> Grid {
        self.interp.grid()
    }

    pub fn counters(&self) -> &OpCounters {
        &self.counters
    }
}
