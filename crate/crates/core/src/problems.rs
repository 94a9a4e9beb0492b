//! Problem construction and registration quality metrics.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::spectral::SpectralOps;
use crate::transport::solve_state;
use crate::Operators;

/// Where a problem's images came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    /// Analytic benchmark; `n_t` is the step count used to synthesize the
    /// reference image.
    Synthetic { incompressible: bool, n_t: usize },
    /// Loaded from volume files and run through `preprocess`.
    Files { template: String, reference: String, pad: usize },
    /// Constructed in memory (tests).
    InMemory,
}

/// A registration problem: reference and template images on one grid.
#[derive(Debug, Clone)]
pub struct RegistrationProblem {
    pub reference: ScalarField,
    pub template: ScalarField,
    pub incompressible: bool,
    pub provenance: Provenance,
}

impl RegistrationProblem {
    pub fn from_fields(
        reference: ScalarField,
        template: ScalarField,
        incompressible: bool,
    ) -> Result<Self> {
        if reference.grid() != template.grid() {
            return Err(Error::GridMismatch {
                left: reference.grid().dims(),
                right: template.grid().dims(),
            });
        }
        if !reference.is_finite() || !template.is_finite() {
            return Err(Error::NonFiniteInput { context: "problem images" });
        }
        Ok(Self { reference, template, incompressible, provenance: Provenance::InMemory })
    }

    pub fn grid(&self) -> Grid {
        self.template.grid()
    }
}

/// The analytic template image `(sin^2 x1 + sin^2 x2 + sin^2 x3) / 3`.
pub fn synthetic_template(grid: Grid) -> ScalarField {
    ScalarField::from_fn(grid, |x1, x2, x3| {
        (x1.sin().powi(2) + x2.sin().powi(2) + x3.sin().powi(2)) / 3.0
    })
}

/// The benchmark velocity `(cos x1 sin x2, cos x2 sin x1, cos x1 sin x3)`,
/// or an analytically divergence-free variant
/// `(sin x2 cos x3, sin x3 cos x1, sin x1 cos x2)` for the
/// volume-preserving benchmark.
pub fn synthetic_velocity(grid: Grid, incompressible: bool) -> VectorField {
    if incompressible {
        VectorField::from_fn(grid, |x1, x2, x3| {
            [x2.sin() * x3.cos(), x3.sin() * x1.cos(), x1.sin() * x2.cos()]
        })
    } else {
        VectorField::from_fn(grid, |x1, x2, x3| {
            [x1.cos() * x2.sin(), x2.cos() * x1.sin(), x1.cos() * x3.sin()]
        })
    }
}

/// Builds the synthetic benchmark: the template is analytic and the
/// reference is defined as the end-time state transport of the template by
/// the benchmark velocity. Deterministic for fixed grid, flag, and `n_t`.
/// Returns the problem and the generating velocity.
pub fn make_synthetic(
    ops: &Operators,
    incompressible: bool,
    n_t: usize,
) -> Result<(RegistrationProblem, VectorField)> {
    let grid = ops.grid();
    let template = synthetic_template(grid);
    let v_star = synthetic_velocity(grid, incompressible);
    let series = solve_state(ops, &v_star, &template, n_t)?;
    let reference = series.last().clone();
    Ok((
        RegistrationProblem {
            reference,
            template,
            incompressible,
            provenance: Provenance::Synthetic { incompressible, n_t },
        },
        v_star,
    ))
}

/// Deterministic smooth random benchmark: a low-frequency template (single
/// wavenumber band plus offset) registered against its transport by a mild
/// random velocity, both images Gaussian-smoothed. Suited to gradient and
/// operator checks where image roughness would otherwise dominate the
/// discretization error.
pub fn make_smooth_random(
    ops: &Operators,
    n_t: usize,
    seed: u64,
) -> Result<(RegistrationProblem, VectorField)> {
    use crate::bandlimited::{random_band_limited_scalar, random_band_limited_vector};
    use crate::rng::SplitMix64;

    let mut rng = SplitMix64::new(seed);
    let mut template = random_band_limited_scalar(ops.grid(), 1, 0.5, &mut rng);
    for v in template.values_mut() {
        *v += 0.5;
    }
    let v_gen = random_band_limited_vector(ops.grid(), 1, 0.15, &mut rng);
    let reference = solve_state(ops, &v_gen, &template, n_t)?.last().clone();
    let sigma = ops.spectral.default_sigma().map(|s| 2.0 * s);
    let reference = ops.spectral.gaussian_smooth(&reference, sigma)?;
    let template = ops.spectral.gaussian_smooth(&template, sigma)?;
    Ok((RegistrationProblem::from_fields(reference, template, false)?, v_gen))
}

/// Preprocessing summary for the metadata sidecar.
#[derive(Debug, Clone, Copy)]
pub struct PreprocessReport {
    pub pad: usize,
    pub sigma: [f64; 3],
    pub raw_min: f64,
    pub raw_max: f64,
}

/// Embeds a raw volume centered in a zero background enlarged by `pad` cells
/// per side, smooths spectrally with a Gaussian (default bandwidth `2*pi/N`
/// per axis of the padded grid), and rescales intensities to `[0, 1]`
/// (constant fields pass through). The result lives on the padded grid and
/// is periodic by construction.
pub fn preprocess(
    raw: &ScalarField,
    pad: usize,
    sigma: Option<[f64; 3]>,
) -> Result<(ScalarField, PreprocessReport)> {
    let [n1, n2, n3] = raw.grid().dims();
    let grid = Grid::new(n1 + 2 * pad, n2 + 2 * pad, n3 + 2 * pad)?;
    let mut embedded = ScalarField::zeros(grid);
    for i3 in 0..n3 {
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                let idx = grid.index(i1 + pad, i2 + pad, i3 + pad);
                embedded.values_mut()[idx] = raw.at(i1, i2, i3);
            }
        }
    }
    // standalone spectral pass on the padded grid; not part of any solver's
    // operation accounting
    let spectral = SpectralOps::new(grid, std::sync::Arc::new(crate::OpCounters::new()));
    let sigma = sigma.unwrap_or_else(|| spectral.default_sigma());
    let smoothed = spectral.gaussian_smooth(&embedded, sigma)?;
    let (lo, hi) = smoothed.min_max();
    let report = PreprocessReport { pad, sigma, raw_min: lo, raw_max: hi };
    if hi > lo {
        let scale = 1.0 / (hi - lo);
        let values = smoothed.values().iter().map(|&v| (v - lo) * scale).collect();
        Ok((ScalarField::from_values(grid, values)?, report))
    } else {
        Ok((smoothed, report))
    }
}

/// Registration quality summary.
#[derive(Debug, Clone, Copy)]
pub struct QualityMetrics {
    /// `||rho1 - rho_R|| / ||rho_T - rho_R||`; zero when the images already
    /// coincide.
    pub relative_misfit: f64,
    pub det_min: f64,
    pub det_max: f64,
    pub det_mean: f64,
    pub max_abs_det_minus_one: f64,
    pub div_v_norm: f64,
    pub div_v_ratio: f64,
    /// `det(grad y1) > 0` everywhere.
    pub diffeomorphic: bool,
}

/// Pure function of the solved registration: misfit reduction, deformation
/// gradient determinant statistics, and divergence of the velocity.
pub fn quality_metrics(
    ops: &Operators,
    problem: &RegistrationProblem,
    v: &VectorField,
    det: &ScalarField,
    rho1: &ScalarField,
) -> Result<QualityMetrics> {
    let grid = problem.grid();
    if det.grid() != grid || rho1.grid() != grid || v.grid() != grid {
        return Err(Error::GridMismatch { left: det.grid().dims(), right: grid.dims() });
    }
    let mut res = rho1.clone();
    res.axpy(-1.0, &problem.reference)?;
    let mut initial = problem.template.clone();
    initial.axpy(-1.0, &problem.reference)?;
    let denom = initial.norm();
    let relative_misfit = if denom > 0.0 { res.norm() / denom } else { 0.0 };

    let (det_min, det_max) = det.min_max();
    let det_mean = det.mean();
    let max_abs_det_minus_one =
        det.values().iter().map(|&d| (d - 1.0).abs()).fold(0.0, f64::max);
    let div_v_norm = ops.spectral.divergence(v).norm();
    let vn = v.norm();
    let div_v_ratio = if vn > 0.0 { div_v_norm / vn } else { 0.0 };
    Ok(QualityMetrics {
        relative_misfit,
        det_min,
        det_max,
        det_mean,
        max_abs_det_minus_one,
        div_v_norm,
        div_v_ratio,
        diffeomorphic: det_min > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{deformation_map, det_deformation_gradient};

    fn ops(n: usize) -> Operators {
        Operators::serial(Grid::isotropic(n).unwrap())
    }

    #[test]
    fn synthetic_template_matches_formula() {
        let grid = Grid::isotropic(16).unwrap();
        let t = synthetic_template(grid);
        let (lo, hi) = t.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
        assert_eq!(t.at(0, 0, 0), 0.0);
        // pi/2 is node 4 of 16
        assert!((t.at(4, 4, 4) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn synthetic_velocity_matches_formula() {
        let grid = Grid::isotropic(16).unwrap();
        let v = synthetic_velocity(grid, false);
        let idx0 = grid.index(0, 0, 0);
        for j in 0..3 {
            assert_eq!(v.component(j).values()[idx0], 0.0);
        }
        // x = (0, pi/2, 0): v = (cos 0 sin(pi/2), ...) = (1, 0, 0)
        let idx = grid.index(0, 4, 0);
        assert!((v.component(0).values()[idx] - 1.0).abs() < 1e-15);
        assert!(v.component(1).values()[idx].abs() < 1e-15);
        assert!(v.component(2).values()[idx].abs() < 1e-15);
    }

    #[test]
    fn incompressible_velocity_is_divergence_free() {
        let ops = ops(16);
        let v = synthetic_velocity(ops.grid(), true);
        assert!(ops.spectral.divergence(&v).norm() < 1e-12);
    }

    #[test]
    fn zero_velocity_makes_reference_equal_template() {
        let ops = ops(16);
        let template = synthetic_template(ops.grid());
        let zero = VectorField::zeros(ops.grid());
        let series = solve_state(&ops, &zero, &template, 4).unwrap();
        for (a, b) in series.last().values().iter().zip(template.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn make_synthetic_is_deterministic() {
        let ops = ops(16);
        let (p1, v1) = make_synthetic(&ops, false, 4).unwrap();
        let (p2, v2) = make_synthetic(&ops, false, 4).unwrap();
        for (a, b) in p1.reference.values().iter().zip(p2.reference.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let mut d = v1.clone();
        d.axpy(-1.0, &v2).unwrap();
        assert_eq!(d.norm(), 0.0);
    }

    #[test]
    fn preprocess_pads_smooths_and_rescales() {
        let grid = Grid::isotropic(16).unwrap();
        let raw = synthetic_template(grid);
        let (out, report) = preprocess(&raw, 2, None).unwrap();
        assert_eq!(out.grid().dims(), [20, 20, 20]);
        assert_eq!(report.pad, 2);
        let (lo, hi) = out.min_max();
        assert!(lo >= -1e-15 && hi <= 1.0 + 1e-15);
        assert!((hi - 1.0).abs() < 1e-12 && lo.abs() < 1e-12, "rescaled to [0,1]");
    }

    #[test]
    fn preprocess_constant_stays_constant() {
        let grid = Grid::isotropic(8).unwrap();
        let raw = ScalarField::constant(grid, 0.7);
        let (out, _) = preprocess(&raw, 0, None).unwrap();
        let (lo, hi) = out.min_max();
        assert!((hi - lo).abs() < 1e-13);
        assert!((out.mean() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn smoothing_preserves_mass_of_spike() {
        // the Gaussian filter has unit gain at k = 0, so the mean (and hence
        // the sum) is preserved even though the peak drops
        let grid = Grid::isotropic(16).unwrap();
        let mut spike = ScalarField::zeros(grid);
        let center = grid.index(8, 8, 8);
        spike.values_mut()[center] = 1.0;
        let spectral =
            SpectralOps::new(grid, std::sync::Arc::new(crate::OpCounters::new()));
        let smoothed = spectral.gaussian_smooth(&spike, spectral.default_sigma()).unwrap();
        let sum_before: f64 = spike.values().iter().sum();
        let sum_after: f64 = smoothed.values().iter().sum();
        assert!((sum_before - sum_after).abs() < 1e-12);
        let (_, peak) = smoothed.min_max();
        assert!(peak < 1.0);
    }

    #[test]
    fn metrics_for_identity_velocity() {
        let ops = ops(16);
        let (problem, _) = make_synthetic(&ops, false, 4).unwrap();
        let v = VectorField::zeros(ops.grid());
        let y = deformation_map(&ops, &v, 4).unwrap();
        let det = det_deformation_gradient(&ops, &y).unwrap();
        let m = quality_metrics(&ops, &problem, &v, &det, &problem.template).unwrap();
        assert!((m.relative_misfit - 1.0).abs() < 1e-12);
        assert!((m.det_min - 1.0).abs() < 1e-12 && (m.det_max - 1.0).abs() < 1e-12);
        assert!(m.diffeomorphic);
        assert_eq!(m.div_v_ratio, 0.0);
    }

    #[test]
    fn metrics_for_rigid_translation() {
        let ops = ops(16);
        let (problem, _) = make_synthetic(&ops, false, 4).unwrap();
        let v = VectorField::from_fn(ops.grid(), |_, _, _| [0.4, -0.2, 0.1]);
        let y = deformation_map(&ops, &v, 4).unwrap();
        let det = det_deformation_gradient(&ops, &y).unwrap();
        let m = quality_metrics(&ops, &problem, &v, &det, &problem.template).unwrap();
        assert!(m.max_abs_det_minus_one < 1e-9, "det deviation {}", m.max_abs_det_minus_one);
        assert!(m.diffeomorphic);
    }
}
