//! Operation counters for the cost accounting.
//!
//! One FFT count is one logical operator application at the granularity of a
//! full 3-D scalar transform: a standalone forward or inverse FFT counts 1;
//! a spectral gradient or divergence counts 2, because the per-axis
//! first-derivative passes add up to exactly two 3-D transforms' worth of
//! 1-D sweeps (each axis is transformed forward and back once). One
//! interpolation count is one scatter/interpolate/gather pass of a scalar
//! field over a point set; interpolating a vector field counts 3.

use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Default)]
pub struct OpCounters {
    fft_applications: AtomicU64,
    interp_applications: AtomicU64,
    plan_builds: AtomicU64,
    departure_builds: AtomicU64,
}

/// Point-in-time copy of the counters, used to measure per-phase deltas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CounterSnapshot {
    pub fft_applications: u64,
    pub interp_applications: u64,
    pub plan_builds: u64,
    pub departure_builds: u64,
}

impl CounterSnapshot {
    pub fn delta_since(&self, earlier: &CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            fft_applications: self.fft_applications - earlier.fft_applications,
            interp_applications: self.interp_applications - earlier.interp_applications,
            plan_builds: self.plan_builds - earlier.plan_builds,
            departure_builds: self.departure_builds - earlier.departure_builds,
        }
    }
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add_fft(&self, n: u64) {
        self.fft_applications.fetch_add(n, Ordering::Relaxed);
    }

    #[inline]
    pub fn add_interp(&self, n: u64) {
        self.interp_applications.fetch_add(n, Ordering::Relaxed);
    }

    #[inline]
    pub fn add_plan_build(&self) {
        self.plan_builds.fetch_add(1, Ordering::Relaxed);
    }

    #[inline]
    pub fn add_departure_build(&self) {
        self.departure_builds.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            fft_applications: self.fft_applications.load(Ordering::Relaxed),
            interp_applications: self.interp_applications.load(Ordering::Relaxed),
            plan_builds: self.plan_builds.load(Ordering::Relaxed),
            departure_builds: self.departure_builds.load(Ordering::Relaxed),
        }
    }
}
