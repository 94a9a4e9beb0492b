//! Spectral spatial operators on the periodic grid.
//!
//! Every operator transforms to Fourier space, applies a diagonal symbol,
//! and transforms back. Wavenumbers per axis run over
//! `-N/2+1 <= k <= N/2`. Conventions:
//!
//! - First-derivative symbols (`gradient`, `divergence`, and the wavevector
//!   used inside `leray_project`) zero the Nyquist mode `k = N/2`, whose sign
//!   is ambiguous for real fields.
//! - Even-order symbols (`laplacian`, `biharmonic`, Gaussian filter) keep the
//!   full wavenumber including Nyquist, so the objective's smoothness term
//!   and its derivative `beta * biharmonic(v)` match exactly.
//! - `inv_biharmonic` maps the `k = 0` mode by `1/beta` instead of leaving
//!   the preconditioner singular on constants.
//!
//! Gradient and divergence are computed by per-axis partial transforms
//! (forward and inverse 1-D sweeps along one axis only), so a full gradient
//! performs six axis sweeps, the work of exactly two 3-D transforms; the
//! operation counters record it as 2.
//!
//! All transforms are single-threaded and use fixed plans, so results are
//! bitwise reproducible for a given grid and rustfft version.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::counters::OpCounters;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};

/// Complex Fourier coefficients of a real scalar field, stored on the full
/// wavenumber cube in the same x-fastest linear order as field values.
#[derive(Debug, Clone)]
pub struct SpectralCoefficients {
    grid: Grid,
    values: Vec<Complex<f64>>,
}

impl SpectralCoefficients {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[Complex<f64>] {
        &self.values
    }

    /// Coefficient for the signed wavenumber triple `(k1, k2, k3)`.
    pub fn at_mode(&self, k: [isize; 3]) -> Complex<f64> {
        let [n1, n2, n3] = self.grid.dims();
        let wrap = |k: isize, n: usize| -> usize {
            let n = n as isize;
            (((k % n) + n) % n) as usize
        };
        self.values[self.grid.index(wrap(k[0], n1), wrap(k[1], n2), wrap(k[2], n3))]
    }
}

/// Signed wavenumber for sample index `i` on an axis of `n` points.
#[inline]
fn wavenumber(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Same, with the Nyquist mode zeroed (first-derivative convention).
#[inline]
fn wavenumber_deriv(i: usize, n: usize) -> f64 {
    if i == n / 2 {
        0.0
    } else {
        wavenumber(i, n)
    }
}

/// FFT plans and spectral operators bound to one grid.
pub struct SpectralOps {
    grid: Grid,
    forward_plans: [Arc<dyn Fft<f64>>; 3],
    inverse_plans: [Arc<dyn Fft<f64>>; 3],
    counters: Arc<OpCounters>,
}

impl SpectralOps {
    pub fn new(grid: Grid, counters: Arc<OpCounters>) -> Self {
        let mut planner = FftPlanner::new();
        let [n1, n2, n3] = grid.dims();
        let forward_plans = [
            planner.plan_fft_forward(n1),
            planner.plan_fft_forward(n2),
            planner.plan_fft_forward(n3),
        ];
        let inverse_plans = [
            planner.plan_fft_inverse(n1),
            planner.plan_fft_inverse(n2),
            planner.plan_fft_inverse(n3),
        ];
        Self { grid, forward_plans, inverse_plans, counters }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn assert_grid(&self, g: Grid) {
        assert_eq!(self.grid, g, "field grid does not match spectral plans");
    }

    /// One batch of 1-D transforms along `axis`, in place on the cube.
    /// Axis 0 rows are contiguous; axes 1 and 2 go through a transposed
    /// plane buffer so the FFT always runs on contiguous rows.
    fn sweep(&self, buf: &mut [Complex<f64>], axis: usize, forward: bool) {
        let [n1, n2, n3] = self.grid.dims();
        let fft = if forward { &self.forward_plans[axis] } else { &self.inverse_plans[axis] };
        let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        match axis {
            0 => fft.process_with_scratch(buf, &mut scratch),
            1 => {
                let mut plane = vec![Complex::default(); n1 * n2];
                for i3 in 0..n3 {
                    let base = i3 * n1 * n2;
                    for i2 in 0..n2 {
                        for i1 in 0..n1 {
                            plane[i2 + n2 * i1] = buf[base + i1 + n1 * i2];
                        }
                    }
                    fft.process_with_scratch(&mut plane, &mut scratch);
                    for i2 in 0..n2 {
                        for i1 in 0..n1 {
                            buf[base + i1 + n1 * i2] = plane[i2 + n2 * i1];
                        }
                    }
                }
            }
            2 => {
                let mut plane = vec![Complex::default(); n1 * n3];
                for i2 in 0..n2 {
                    for i3 in 0..n3 {
                        let base = i3 * n1 * n2 + i2 * n1;
                        for i1 in 0..n1 {
                            plane[i3 + n3 * i1] = buf[base + i1];
                        }
                    }
                    fft.process_with_scratch(&mut plane, &mut scratch);
                    for i3 in 0..n3 {
                        let base = i3 * n1 * n2 + i2 * n1;
                        for i1 in 0..n1 {
                            buf[base + i1] = plane[i3 + n3 * i1];
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    fn load_complex(&self, f: &ScalarField) -> Vec<Complex<f64>> {
        f.values().iter().map(|&v| Complex::new(v, 0.0)).collect()
    }

    fn store_real(&self, buf: &[Complex<f64>], normalize: f64) -> ScalarField {
        let values = buf.iter().map(|c| c.re * normalize).collect();
        ScalarField::from_values(self.grid, values).expect("buffer length matches grid")
    }

    fn forward_cube(&self, f: &ScalarField) -> Vec<Complex<f64>> {
        let mut buf = self.load_complex(f);
        for axis in 0..3 {
            self.sweep(&mut buf, axis, true);
        }
        buf
    }

    fn inverse_cube(&self, mut buf: Vec<Complex<f64>>) -> ScalarField {
        for axis in 0..3 {
            self.sweep(&mut buf, axis, false);
        }
        self.store_real(&buf, 1.0 / self.grid.len() as f64)
    }

    /// Forward FFT of a real field. Counts one FFT application.
    pub fn forward(&self, f: &ScalarField) -> SpectralCoefficients {
        self.assert_grid(f.grid());
        self.counters.add_fft(1);
        SpectralCoefficients { grid: self.grid, values: self.forward_cube(f) }
    }

    /// Inverse FFT back to a real field. Counts one FFT application.
    pub fn inverse(&self, c: &SpectralCoefficients) -> ScalarField {
        self.assert_grid(c.grid);
        self.counters.add_fft(1);
        self.inverse_cube(c.values.clone())
    }

    /// Partial derivative along one axis via forward/inverse sweeps along
    /// that axis only. No counter bookkeeping here; callers account for it.
    fn derivative_axis(&self, f: &ScalarField, axis: usize) -> ScalarField {
        let [n1, n2, _] = self.grid.dims();
        let n_axis = self.grid.dims()[axis];
        let stride = match axis {
            0 => 1,
            1 => n1,
            _ => n1 * n2,
        };
        let mut buf = self.load_complex(f);
        self.sweep(&mut buf, axis, true);
        // multiply mode m by i*k(m)/N (inverse normalization folded in)
        let inv_n = 1.0 / n_axis as f64;
        for (idx, c) in buf.iter_mut().enumerate() {
            let m = (idx / stride) % n_axis;
            let k = wavenumber_deriv(m, n_axis) * inv_n;
            *c = Complex::new(-c.im * k, c.re * k);
        }
        self.sweep(&mut buf, axis, false);
        self.store_real(&buf, 1.0)
    }

    /// Spectral gradient. Counts 2 FFT applications (six axis sweeps).
    pub fn gradient(&self, f: &ScalarField) -> VectorField {
        self.assert_grid(f.grid());
        self.counters.add_fft(2);
        VectorField::from_components(
            self.derivative_axis(f, 0),
            self.derivative_axis(f, 1),
            self.derivative_axis(f, 2),
        )
        .expect("components share the grid")
    }

    /// Spectral divergence. Counts 2 FFT applications (six axis sweeps).
    pub fn divergence(&self, v: &VectorField) -> ScalarField {
        self.assert_grid(v.grid());
        self.counters.add_fft(2);
        let mut out = self.derivative_axis(v.component(0), 0);
        out.axpy(1.0, &self.derivative_axis(v.component(1), 1)).expect("same grid");
        out.axpy(1.0, &self.derivative_axis(v.component(2), 2)).expect("same grid");
        out
    }

    /// Forward transform, real diagonal symbol, inverse transform.
    /// Counts 2 FFT applications.
    fn apply_symbol(&self, f: &ScalarField, symbol: impl Fn(f64) -> f64) -> ScalarField {
        self.assert_grid(f.grid());
        self.counters.add_fft(2);
        let [n1, n2, n3] = self.grid.dims();
        let mut buf = self.forward_cube(f);
        let mut idx = 0;
        for i3 in 0..n3 {
            let k3 = wavenumber(i3, n3);
            for i2 in 0..n2 {
                let k2 = wavenumber(i2, n2);
                for i1 in 0..n1 {
                    let k1 = wavenumber(i1, n1);
                    let s = symbol(k1 * k1 + k2 * k2 + k3 * k3);
                    buf[idx] = buf[idx].scale(s);
                    idx += 1;
                }
            }
        }
        self.inverse_cube(buf)
    }

    /// `laplacian(f)`, symbol `-|k|^2` (full wavenumber, Nyquist included).
    pub fn laplacian_scalar(&self, f: &ScalarField) -> ScalarField {
        self.apply_symbol(f, |k2| -k2)
    }

    /// Componentwise Laplacian of a vector field. Counts 6 FFT applications.
    pub fn laplacian(&self, v: &VectorField) -> VectorField {
        VectorField::from_components(
            self.laplacian_scalar(v.component(0)),
            self.laplacian_scalar(v.component(1)),
            self.laplacian_scalar(v.component(2)),
        )
        .expect("components share the grid")
    }

    /// Inverse Laplacian with the zero mode mapped to zero.
    pub fn inv_laplacian(&self, f: &ScalarField) -> ScalarField {
        self.apply_symbol(f, |k2| if k2 == 0.0 { 0.0 } else { -1.0 / k2 })
    }

    /// Componentwise biharmonic `|k|^4`. Counts 6 FFT applications.
    pub fn biharmonic(&self, v: &VectorField) -> VectorField {
        let bi = |f: &ScalarField| self.apply_symbol(f, |k2| k2 * k2);
        VectorField::from_components(
            bi(v.component(0)),
            bi(v.component(1)),
            bi(v.component(2)),
        )
        .expect("components share the grid")
    }

    /// Preconditioner symbol `1/(beta * max(|k|^4, 1))`; the zero mode maps
    /// by `1/beta` so the operator stays invertible. Counts 6 FFTs.
    pub fn inv_biharmonic(&self, v: &VectorField, beta: f64) -> Result<VectorField> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter { name: "beta", value: beta });
        }
        let ib = |f: &ScalarField| {
            self.apply_symbol(f, |k2| {
                let k4 = (k2 * k2).max(1.0);
                1.0 / (beta * k4)
            })
        };
        Ok(VectorField::from_components(
            ib(v.component(0)),
            ib(v.component(1)),
            ib(v.component(2)),
        )
        .expect("components share the grid"))
    }

    /// Projection onto discretely divergence-free fields:
    /// `v_hat - k (k . v_hat) / |k|^2` per mode, with the Nyquist-zeroed
    /// wavevector of the first-derivative convention, so
    /// `divergence(leray_project(v)) = 0` and the projection is idempotent.
    /// Modes whose zeroed wavevector vanishes (including k = 0) pass through.
    /// Counts 6 FFT applications.
    pub fn leray_project(&self, v: &VectorField) -> VectorField {
        self.assert_grid(v.grid());
        self.counters.add_fft(6);
        let [n1, n2, n3] = self.grid.dims();
        let mut c1 = self.forward_cube(v.component(0));
        let mut c2 = self.forward_cube(v.component(1));
        let mut c3 = self.forward_cube(v.component(2));
        let mut idx = 0;
        for i3 in 0..n3 {
            let k3 = wavenumber_deriv(i3, n3);
            for i2 in 0..n2 {
                let k2 = wavenumber_deriv(i2, n2);
                for i1 in 0..n1 {
                    let k1 = wavenumber_deriv(i1, n1);
                    let kk = k1 * k1 + k2 * k2 + k3 * k3;
                    if kk > 0.0 {
                        let dot = c1[idx].scale(k1) + c2[idx].scale(k2) + c3[idx].scale(k3);
                        let proj = dot.unscale(kk);
                        c1[idx] -= proj.scale(k1);
                        c2[idx] -= proj.scale(k2);
                        c3[idx] -= proj.scale(k3);
                    }
                    idx += 1;
                }
            }
        }
        VectorField::from_components(
            self.inverse_cube(c1),
            self.inverse_cube(c2),
            self.inverse_cube(c3),
        )
        .expect("components share the grid")
    }

    /// Gaussian low-pass filter with per-axis bandwidth `sigma`, spectral
    /// gain `exp(-(k1^2 s1^2 + k2^2 s2^2 + k3^2 s3^2)/2)`. Counts 2 FFTs.
    pub fn gaussian_smooth(&self, f: &ScalarField, sigma: [f64; 3]) -> Result<ScalarField> {
        if sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter { name: "sigma", value: sigma[0].min(sigma[1]).min(sigma[2]) });
        }
        self.assert_grid(f.grid());
        self.counters.add_fft(2);
        let [n1, n2, n3] = self.grid.dims();
        let mut buf = self.forward_cube(f);
        let mut idx = 0;
        for i3 in 0..n3 {
            let k3 = wavenumber(i3, n3) * sigma[2];
            for i2 in 0..n2 {
                let k2 = wavenumber(i2, n2) * sigma[1];
                for i1 in 0..n1 {
                    let k1 = wavenumber(i1, n1) * sigma[0];
                    let gain = (-0.5 * (k1 * k1 + k2 * k2 + k3 * k3)).exp();
                    buf[idx] = buf[idx].scale(gain);
                    idx += 1;
                }
            }
        }
        Ok(self.inverse_cube(buf))
    }

    /// Default smoothing bandwidth `2*pi/N` per axis.
    pub fn default_sigma(&self) -> [f64; 3] {
        self.grid.spacing()
    }
}
