//! Deterministic band-limited trigonometric fields for tests and tools.
//!
//! Fields are built as explicit sums of `cos(k.x)` / `sin(k.x)` modes with
//! `|k_j| <= k_max`, so they are smooth, periodic, and strictly below the
//! Nyquist frequency of any grid with `N > 2*k_max`.

use crate::grid::{Grid, ScalarField, VectorField};
use crate::rng::SplitMix64;

struct Mode {
    k: [f64; 3],
    a: f64,
    b: f64,
}

/// A random trigonometric polynomial with closed-form derivatives, usable as
/// an independent oracle for spectral operators.
pub struct TrigPoly {
    modes: Vec<Mode>,
}

impl TrigPoly {
    pub fn random(k_max: isize, amplitude: f64, rng: &mut SplitMix64) -> Self {
        Self { modes: random_modes(k_max, amplitude, rng) }
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let mut v = 0.0;
        for m in &self.modes {
            let phase = m.k[0] * x[0] + m.k[1] * x[1] + m.k[2] * x[2];
            v += m.a * phase.cos() + m.b * phase.sin();
        }
        v
    }

    /// Analytic partial derivative along `axis`.
    pub fn eval_derivative(&self, x: [f64; 3], axis: usize) -> f64 {
        let mut v = 0.0;
        for m in &self.modes {
            let phase = m.k[0] * x[0] + m.k[1] * x[1] + m.k[2] * x[2];
            v += m.k[axis] * (-m.a * phase.sin() + m.b * phase.cos());
        }
        v
    }

    pub fn sample(&self, grid: Grid) -> ScalarField {
        ScalarField::from_fn(grid, |x1, x2, x3| self.eval([x1, x2, x3]))
    }

    pub fn sample_gradient(&self, grid: Grid) -> VectorField {
        self.sample_with_gradient(grid).1
    }

    /// Value and analytic gradient in one pass (one sin/cos per mode per
    /// point instead of four).
    pub fn sample_with_gradient(&self, grid: Grid) -> (ScalarField, VectorField) {
        let mut f = ScalarField::zeros(grid);
        let mut g = VectorField::zeros(grid);
        let [n1, n2, n3] = grid.dims();
        let h = grid.spacing();
        let mut idx = 0;
        for i3 in 0..n3 {
            let x3 = i3 as f64 * h[2];
            for i2 in 0..n2 {
                let x2 = i2 as f64 * h[1];
                for i1 in 0..n1 {
                    let x1 = i1 as f64 * h[0];
                    let mut val = 0.0;
                    let mut grad = [0.0; 3];
                    for m in &self.modes {
                        let phase = m.k[0] * x1 + m.k[1] * x2 + m.k[2] * x3;
                        let (s, c) = phase.sin_cos();
                        val += m.a * c + m.b * s;
                        let d = -m.a * s + m.b * c;
                        grad[0] += m.k[0] * d;
                        grad[1] += m.k[1] * d;
                        grad[2] += m.k[2] * d;
                    }
                    f.values_mut()[idx] = val;
                    for j in 0..3 {
                        g.component_mut(j).values_mut()[idx] = grad[j];
                    }
                    idx += 1;
                }
            }
        }
        (f, g)
    }
}

fn random_modes(k_max: isize, amplitude: f64, rng: &mut SplitMix64) -> Vec<Mode> {
    // full box for narrow bands; a sparse sample for wide ones, so field
    // construction stays cheap at large k_max
    let full = (2 * k_max + 1).pow(3) - 1;
    let count = full.min(48) as usize;
    let mut modes = Vec::with_capacity(count);
    if full <= 48 {
        for k1 in -k_max..=k_max {
            for k2 in -k_max..=k_max {
                for k3 in -k_max..=k_max {
                    if k1 == 0 && k2 == 0 && k3 == 0 {
                        continue;
                    }
                    modes.push(Mode {
                        k: [k1 as f64, k2 as f64, k3 as f64],
                        a: rng.uniform(-1.0, 1.0),
                        b: rng.uniform(-1.0, 1.0),
                    });
                }
            }
        }
    } else {
        let span = (2 * k_max + 1) as u64;
        while modes.len() < count {
            let k1 = (rng.next_u64() % span) as isize - k_max;
            let k2 = (rng.next_u64() % span) as isize - k_max;
            let k3 = (rng.next_u64() % span) as isize - k_max;
            if k1 == 0 && k2 == 0 && k3 == 0 {
                continue;
            }
            modes.push(Mode {
                k: [k1 as f64, k2 as f64, k3 as f64],
                a: rng.uniform(-1.0, 1.0),
                b: rng.uniform(-1.0, 1.0),
            });
        }
    }
    let norm = amplitude / (modes.len() as f64).sqrt();
    for m in &mut modes {
        m.a *= norm;
        m.b *= norm;
    }
    modes
}

fn eval_modes(grid: Grid, modes: &[Mode]) -> ScalarField {
    ScalarField::from_fn(grid, |x1, x2, x3| {
        let mut v = 0.0;
        for m in modes {
            let phase = m.k[0] * x1 + m.k[1] * x2 + m.k[2] * x3;
            v += m.a * phase.cos() + m.b * phase.sin();
        }
        v
    })
}

/// Random smooth scalar field with modes up to `k_max` per axis.
pub fn random_band_limited_scalar(
    grid: Grid,
    k_max: isize,
    amplitude: f64,
    rng: &mut SplitMix64,
) -> ScalarField {
    eval_modes(grid, &random_modes(k_max, amplitude, rng))
}

/// Random smooth vector field, componentwise independent modes.
pub fn random_band_limited_vector(
    grid: Grid,
    k_max: isize,
    amplitude: f64,
    rng: &mut SplitMix64,
) -> VectorField {
    VectorField::from_components(
        random_band_limited_scalar(grid, k_max, amplitude, rng),
        random_band_limited_scalar(grid, k_max, amplitude, rng),
        random_band_limited_scalar(grid, k_max, amplitude, rng),
    )
    .expect("components share the grid")
}

/// Uniform random points on the periodic domain.
pub fn random_points(count: usize, rng: &mut SplitMix64) -> Vec<[f64; 3]> {
    use crate::grid::TWO_PI;
    (0..count)
        .map(|_| {
            [
                rng.uniform(0.0, TWO_PI),
                rng.uniform(0.0, TWO_PI),
                rng.uniform(0.0, TWO_PI),
            ]
        })
        .collect()
}
