//! Periodic Cartesian grid geometry and field storage.
//!
//! All computations run on the torus `[0, 2*pi)^3`. Scalar fields store one
//! `f64` per grid point in x-fastest linear order,
//! `index = i1 + N1*(i2 + N2*i3)`, which keeps pencil slabs contiguous for
//! the partition harness and matches the volume file layout.

use crate::error::{Error, Result};

pub const TWO_PI: f64 = core::f64::consts::TAU;

/// Periodic grid: `N1 x N2 x N3` points on `[0, 2*pi)^3`, spacing
/// `h_i = 2*pi/N_i`, node `x_i = 2*pi*i/N_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    dims: [usize; 3],
}

impl Grid {
    /// Each axis must be even (well-defined Nyquist convention) and at least
    /// 4 points (tricubic stencil).
    pub fn new(n1: usize, n2: usize, n3: usize) -> Result<Self> {
        let dims = [n1, n2, n3];
        if dims.iter().any(|&n| n < 4 || n % 2 != 0) {
            return Err(Error::InvalidGrid { dims });
        }
        Ok(Self { dims })
    }

    pub fn isotropic(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing per axis.
    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        [
            TWO_PI / self.dims[0] as f64,
            TWO_PI / self.dims[1] as f64,
            TWO_PI / self.dims[2] as f64,
        ]
    }

    /// Volume element `h1*h2*h3` of the discrete L2 inner product.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h[0] * h[1] * h[2]
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        debug_assert!(i1 < self.dims[0] && i2 < self.dims[1] && i3 < self.dims[2]);
        i1 + self.dims[0] * (i2 + self.dims[1] * i3)
    }

    /// Physical coordinate of node `(i1, i2, i3)`.
    #[inline]
    pub fn coord(&self, i1: usize, i2: usize, i3: usize) -> [f64; 3] {
        let h = self.spacing();
        [i1 as f64 * h[0], i2 as f64 * h[1], i3 as f64 * h[2]]
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch { left: self.dims, right: other.dims });
        }
        Ok(())
    }
}

/// Real scalar field sampled on a periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    /// Takes ownership of raw values in x-fastest order.
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::SeriesLength { got: values.len(), expected: grid.len() });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x1, x2, x3)` at every node.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64, f64) -> f64) -> Self {
        let [n1, n2, n3] = grid.dims();
        let h = grid.spacing();
        let mut values = Vec::with_capacity(grid.len());
        for i3 in 0..n3 {
            let x3 = i3 as f64 * h[2];
            for i2 in 0..n2 {
                let x2 = i2 as f64 * h[1];
                for i1 in 0..n1 {
                    values.push(f(i1 as f64 * h[0], x2, x3));
                }
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, i1: usize, i2: usize, i3: usize) -> f64 {
        self.values[self.grid.index(i1, i2, i3)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Discrete L2 inner product `h1*h2*h3 * sum(a*b)`.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok(s * self.grid.cell_volume())
    }

    pub fn norm(&self) -> f64 {
        // inner(self, self) cannot fail
        self.inner(self).expect("same grid").sqrt()
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &ScalarField) -> Result<()> {
        self.grid.check_same(&x.grid)?;
        for (y, v) in self.values.iter_mut().zip(&x.values) {
            *y += alpha * v;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn copy_from(&mut self, src: &ScalarField) -> Result<()> {
        self.grid.check_same(&src.grid)?;
        self.values.copy_from_slice(&src.values);
        Ok(())
    }

    /// Pointwise product accumulated into `self`: `self += alpha * a * b`.
    pub fn add_product(&mut self, alpha: f64, a: &ScalarField, b: &ScalarField) -> Result<()> {
        self.grid.check_same(&a.grid)?;
        self.grid.check_same(&b.grid)?;
        for ((y, u), w) in self.values.iter_mut().zip(&a.values).zip(&b.values) {
            *y += alpha * u * w;
        }
        Ok(())
    }
}

/// Three scalar components on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: [ScalarField; 3],
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            components: [
                ScalarField::zeros(grid),
                ScalarField::zeros(grid),
                ScalarField::zeros(grid),
            ],
        }
    }

    pub fn from_components(c1: ScalarField, c2: ScalarField, c3: ScalarField) -> Result<Self> {
        c1.grid.check_same(&c2.grid)?;
        c1.grid.check_same(&c3.grid)?;
        Ok(Self { components: [c1, c2, c3] })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64, f64) -> [f64; 3]) -> Self {
        let mut c = [ScalarField::zeros(grid), ScalarField::zeros(grid), ScalarField::zeros(grid)];
        let [n1, n2, n3] = grid.dims();
        let h = grid.spacing();
        let mut idx = 0;
        for i3 in 0..n3 {
            for i2 in 0..n2 {
                for i1 in 0..n1 {
                    let v = f(i1 as f64 * h[0], i2 as f64 * h[1], i3 as f64 * h[2]);
                    c[0].values[idx] = v[0];
                    c[1].values[idx] = v[1];
                    c[2].values[idx] = v[2];
                    idx += 1;
                }
            }
        }
        Self { components: c }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.components[0].grid
    }

    #[inline]
    pub fn component(&self, j: usize) -> &ScalarField {
        &self.components[j]
    }

    #[inline]
    pub fn component_mut(&mut self, j: usize) -> &mut ScalarField {
        &mut self.components[j]
    }

    pub fn components(&self) -> &[ScalarField; 3] {
        &self.components
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(ScalarField::is_finite)
    }

    /// Component-summed discrete L2 inner product.
    pub fn inner(&self, other: &VectorField) -> Result<f64> {
        let mut s = 0.0;
        for j in 0..3 {
            s += self.components[j].inner(&other.components[j])?;
        }
        Ok(s)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).expect("same grid").sqrt()
    }

    pub fn axpy(&mut self, alpha: f64, x: &VectorField) -> Result<()> {
        for j in 0..3 {
            self.components[j].axpy(alpha, &x.components[j])?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for c in &mut self.components {
            c.scale(alpha);
        }
    }

    pub fn copy_from(&mut self, src: &VectorField) -> Result<()> {
        for j in 0..3 {
            self.components[j].copy_from(&src.components[j])?;
        }
        Ok(())
    }
}

/// `n_t + 1` stored time slices of a scalar field, slice 0 being the initial
/// condition in the series' own time variable (tau for adjoint sweeps).
#[derive(Debug, Clone)]
pub struct TimeSeries {
    slices: Vec<ScalarField>,
    n_t: usize,
}

impl TimeSeries {
    pub fn new(slices: Vec<ScalarField>, n_t: usize) -> Result<Self> {
        if slices.len() != n_t + 1 {
            return Err(Error::SeriesLength { got: slices.len(), expected: n_t + 1 });
        }
        Ok(Self { slices, n_t })
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_t as f64
    }

    #[inline]
    pub fn slice(&self, m: usize) -> &ScalarField {
        &self.slices[m]
    }

    pub fn slices(&self) -> &[ScalarField] {
        &self.slices
    }

    pub fn first(&self) -> &ScalarField {
        &self.slices[0]
    }

    pub fn last(&self) -> &ScalarField {
        &self.slices[self.n_t]
    }

    /// Reverses slice order in place (tau time to t time for adjoints).
    pub fn reverse(&mut self) {
        self.slices.reverse();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g16() -> Grid {
        Grid::isotropic(16).unwrap()
    }

    #[test]
    fn grid_rejects_odd_and_small_axes() {
        assert!(Grid::new(15, 16, 16).is_err());
        assert!(Grid::new(2, 16, 16).is_err());
        assert!(Grid::new(16, 300, 64).is_ok()); // anisotropic is fine
    }

    #[test]
    fn inner_product_measures_domain() {
        let ones = ScalarField::constant(g16(), 1.0);
        let v = ones.inner(&ones).unwrap();
        assert!((v - TWO_PI.powi(3)).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn inner_product_orthogonality_and_sin_squared() {
        let g = g16();
        let s = ScalarField::from_fn(g, |x1, _, _| x1.sin());
        let c = ScalarField::from_fn(g, |x1, _, _| x1.cos());
        assert!(s.inner(&c).unwrap().abs() < 1e-12);
        // integral of sin^2 over one period per axis = (2 pi)^3 / 2
        let v = s.inner(&s).unwrap();
        assert!((v - TWO_PI.powi(3) / 2.0).abs() < 1e-12 * TWO_PI.powi(3));
    }

    #[test]
    fn inner_product_positive_definite() {
        let g = g16();
        let z = ScalarField::zeros(g);
        assert_eq!(z.inner(&z).unwrap(), 0.0);
        let f = ScalarField::from_fn(g, |x1, x2, _| (x1 + x2).sin() + 0.1);
        assert!(f.inner(&f).unwrap() > 0.0);
    }

    #[test]
    fn inner_product_axis_relabel_invariance() {
        let g = g16();
        let a = ScalarField::from_fn(g, |x1, _, _| x1.sin());
        let b = ScalarField::from_fn(g, |_, x2, _| x2.sin());
        let d = (a.inner(&a).unwrap() - b.inner(&b).unwrap()).abs();
        assert!(d < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = ScalarField::zeros(g16());
        let b = ScalarField::zeros(Grid::isotropic(8).unwrap());
        assert!(matches!(a.inner(&b), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn axpy_and_scale_are_exact() {
        let g = g16();
        let x = ScalarField::constant(g, 1.0);
        let mut y = ScalarField::constant(g, 1.0);
        y.axpy(0.0, &x).unwrap();
        assert!(y.values().iter().all(|&v| v == 1.0));
        y.axpy(2.0, &x).unwrap();
        assert!(y.values().iter().all(|&v| v == 3.0));
        y.scale(1.0);
        assert!(y.values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn vector_components_must_share_grid() {
        let a = ScalarField::zeros(g16());
        let b = ScalarField::zeros(g16());
        let c = ScalarField::zeros(Grid::isotropic(8).unwrap());
        assert!(VectorField::from_components(a, b, c).is_err());
    }

    #[test]
    fn time_series_slice_count_checked() {
        let g = g16();
        let slices = vec![ScalarField::zeros(g); 5];
        assert!(TimeSeries::new(slices.clone(), 4).is_ok());
        assert!(TimeSeries::new(slices, 3).is_err());
    }
}
