//! Reduced-space solver: objective, adjoint gradient, Hessian matvec,
//! preconditioned CG, and the Armijo-globalized inexact (Gauss-)Newton loop.
//!
//! The reduced objective is
//! `J(v) = 1/2 ||rho(1) - rho_R||^2 + beta/2 ||lap v||^2`
//! with `rho` transported from the template by `v`. Its gradient is
//! `g(v) = beta*bih(v) + L b`, `b = integral of lambda(t) grad rho(t) dt`,
//! where `lambda` solves the backward adjoint equation and `L` is the Leray
//! projection in incompressible mode (identity otherwise). The Hessian
//! action follows the same pattern through the incremental state/adjoint
//! pair; Gauss-Newton drops the terms involving `lambda`.
//!
//! Each Newton iteration builds departure points for `+v` and `-v` once and
//! caches the state and adjoint series; every Hessian matvec of that
//! iteration reuses them, costing exactly `8 n_t` FFT applications and
//! `4 n_t` interpolation passes of transport work in Gauss-Newton mode.
//! Line-search trials evaluate the objective at `v + alpha*s`, a different
//! velocity, so each trial builds fresh forward departure points; those
//! evaluations are tallied separately from the matvec counters.

use std::time::Instant;

use crate::counters::CounterSnapshot;
use crate::error::{Error, Result};
use crate::grid::{TimeSeries, VectorField};
use crate::problems::RegistrationProblem;
use crate::transport::{
    deformation_map_with, departure_points, det_deformation_gradient, solve_adjoint_with,
    solve_inc_adjoint_with, solve_inc_state_with, solve_state_with, DeparturePoints, Direction,
    HessianMode,
};
use crate::Operators;

/// Solver parameters. Defaults follow the registration setup used throughout
/// the test problems: `beta = 1e-2`, `n_t = 4`, relative gradient tolerance
/// `1e-2`, at most 50 Newton iterations, Gauss-Newton mode.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub beta: f64,
    pub n_t: usize,
    pub g_tol: f64,
    pub max_newton: usize,
    pub max_krylov: usize,
    pub mode: HessianMode,
    pub incompressible: bool,
    pub armijo_c1: f64,
    pub armijo_shrink: f64,
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 1e-2,
            n_t: 4,
            g_tol: 1e-2,
            max_newton: 50,
            max_krylov: 100,
            mode: HessianMode::GaussNewton,
            incompressible: false,
            armijo_c1: 1e-4,
            armijo_shrink: 0.5,
            max_backtracks: 20,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParameter { name: "beta", value: self.beta });
        }
        if !(self.g_tol > 0.0 && self.g_tol < 1.0) {
            return Err(Error::InvalidParameter { name: "g_tol", value: self.g_tol });
        }
        if self.n_t == 0 || self.max_newton == 0 || self.max_krylov == 0 || self.max_backtracks == 0
        {
            return Err(Error::InvalidParameter { name: "iteration limits", value: 0.0 });
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0)
            || !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0)
        {
            return Err(Error::InvalidParameter { name: "armijo", value: self.armijo_c1 });
        }
        Ok(())
    }
}

/// Objective value split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub j: f64,
    pub misfit: f64,
    pub reg: f64,
}

/// Per-iteration transport data cached for the Hessian matvecs: departure
/// points for both sweep directions plus the state and adjoint series.
pub struct IterationCache {
    v: VectorField,
    dep_fwd: DeparturePoints,
    dep_bwd: DeparturePoints,
    state: TimeSeries,
    adjoint: TimeSeries,
}

impl IterationCache {
    pub fn state(&self) -> &TimeSeries {
        &self.state
    }

    pub fn adjoint(&self) -> &TimeSeries {
        &self.adjoint
    }

    pub fn dep_fwd(&self) -> &DeparturePoints {
        &self.dep_fwd
    }
}

/// Min/max/total operation counts over the calls of one phase.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseStats {
    pub count: usize,
    pub fft_min: u64,
    pub fft_max: u64,
    pub fft_total: u64,
    pub interp_min: u64,
    pub interp_max: u64,
    pub interp_total: u64,
}

impl PhaseStats {
    fn record(&mut self, delta: CounterSnapshot) {
        let (f, i) = (delta.fft_applications, delta.interp_applications);
        if self.count == 0 {
            self.fft_min = f;
            self.fft_max = f;
            self.interp_min = i;
            self.interp_max = i;
        } else {
            self.fft_min = self.fft_min.min(f);
            self.fft_max = self.fft_max.max(f);
            self.interp_min = self.interp_min.min(i);
            self.interp_max = self.interp_max.max(i);
        }
        self.fft_total += f;
        self.interp_total += i;
        self.count += 1;
    }

    fn merge(mut self, other: PhaseStats) -> PhaseStats {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        self.fft_min = self.fft_min.min(other.fft_min);
        self.fft_max = self.fft_max.max(other.fft_max);
        self.interp_min = self.interp_min.min(other.interp_min);
        self.interp_max = self.interp_max.max(other.interp_max);
        self.fft_total += other.fft_total;
        self.interp_total += other.interp_total;
        self.count += other.count;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    IterationLimit,
    LineSearchFailure,
}

/// One accepted Newton iteration, as written to the convergence log.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub iter: usize,
    pub j: f64,
    pub misfit: f64,
    pub reg: f64,
    pub rel_grad: f64,
    pub pcg_iters: usize,
    pub step_length: f64,
    pub cumulative_matvecs: usize,
}

/// Solve summary: per-iteration records, termination reason, operation
/// accounting, and wall time. The matvec count equals the summed PCG
/// iterations; line-search objective evaluations are tallied separately.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub newton_iterations: usize,
    pub total_matvecs: usize,
    pub line_search_evals: usize,
    pub gradient_evals: usize,
    pub pcg_indefinite_hits: usize,
    /// transport-phase counters (incremental solves only) per matvec
    pub matvec_transport: PhaseStats,
    /// whole-matvec counters including quadrature and elliptic tail
    pub matvec_full: PhaseStats,
    /// `||div v|| / ||v||` at each accepted iterate (index 0 = initial)
    pub div_ratios: Vec<f64>,
    pub final_rel_grad: f64,
    pub wall_seconds: f64,
    pub n_t: usize,
    pub beta: f64,
}

impl SolverReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

#[derive(Debug, Default)]
pub struct PcgStats {
    pub iterations: usize,
    pub indefinite_hit: bool,
    pub final_rel_residual: f64,
    pub matvec_transport: PhaseStats,
    pub matvec_full: PhaseStats,
}

struct ObjectiveEval {
    value: ObjectiveValue,
    state: TimeSeries,
    dep_fwd: DeparturePoints,
}

/// The reduced-space Newton-Krylov solver for one registration problem.
/// Single-client: run one solve at a time per instance.
pub struct NewtonSolver<'a> {
    ops: &'a Operators,
    problem: &'a RegistrationProblem,
    config: SolverConfig,
}

impl<'a> NewtonSolver<'a> {
    pub fn new(
        ops: &'a Operators,
        problem: &'a RegistrationProblem,
        config: SolverConfig,
    ) -> Result<Self> {
        config.validate()?;
        if problem.template.grid() != ops.grid() || problem.reference.grid() != ops.grid() {
            return Err(Error::GridMismatch {
                left: problem.template.grid().dims(),
                right: ops.grid().dims(),
            });
        }
        Ok(Self { ops, problem, config })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// `J(v)` split into misfit and regularization terms.
    pub fn objective(&self, v: &VectorField) -> Result<ObjectiveValue> {
        Ok(self.objective_eval(v)?.value)
    }

    fn objective_eval(&self, v: &VectorField) -> Result<ObjectiveEval> {
        let dep_fwd = departure_points(self.ops, v, self.config.n_t, Direction::Forward)?;
        let state = solve_state_with(self.ops, &dep_fwd, &self.problem.template)?;
        let value = self.objective_from_state(v, &state)?;
        Ok(ObjectiveEval { value, state, dep_fwd })
    }

    fn objective_from_state(&self, v: &VectorField, state: &TimeSeries) -> Result<ObjectiveValue> {
        let mut r = state.last().clone();
        r.axpy(-1.0, &self.problem.reference)?;
        let misfit = 0.5 * r.inner(&r)?;
        let lap = self.ops.spectral.laplacian(v);
        let reg = 0.5 * self.config.beta * lap.inner(&lap)?;
        Ok(ObjectiveValue { j: misfit + reg, misfit, reg })
    }

    /// Trapezoidal accumulation of `sum_m w_m * scalar_m * grad(source_m)`,
    /// gradients computed spectrally per slice.
    fn time_quadrature(&self, scalar: &TimeSeries, source: &TimeSeries) -> Result<VectorField> {
        let n_t = scalar.n_t();
        let dt = scalar.dt();
        let mut b = VectorField::zeros(self.ops.grid());
        for m in 0..=n_t {
            let w = if m == 0 || m == n_t { 0.5 * dt } else { dt };
            let g = self.ops.spectral.gradient(source.slice(m));
            for j in 0..3 {
                b.component_mut(j).add_product(w, scalar.slice(m), g.component(j))?;
            }
        }
        Ok(b)
    }

    /// Projection `L` in incompressible mode, identity otherwise.
    fn project(&self, b: VectorField) -> VectorField {
        if self.config.incompressible {
            self.ops.spectral.leray_project(&b)
        } else {
            b
        }
    }

    /// Reduced gradient `g = beta*bih(v) + L b` together with the cached
    /// transport data reused by the Hessian matvecs of this iteration.
    pub fn gradient(&self, v: &VectorField) -> Result<(VectorField, IterationCache)> {
        let eval = self.objective_eval(v)?;
        self.gradient_from_eval(v, eval)
    }

    fn gradient_from_eval(
        &self,
        v: &VectorField,
        eval: ObjectiveEval,
    ) -> Result<(VectorField, IterationCache)> {
        let mut lambda_final = self.problem.reference.clone();
        lambda_final.axpy(-1.0, eval.state.last())?;
        let dep_bwd = departure_points(self.ops, v, self.config.n_t, Direction::Backward)?;
        let adjoint = solve_adjoint_with(self.ops, v, &dep_bwd, &lambda_final)?;

        let b = self.time_quadrature(&adjoint, &eval.state)?;
        let mut g = self.ops.spectral.biharmonic(v);
        g.scale(self.config.beta);
        g.axpy(1.0, &self.project(b))?;

        let cache = IterationCache {
            v: v.clone(),
            dep_fwd: eval.dep_fwd,
            dep_bwd,
            state: eval.state,
            adjoint,
        };
        Ok((g, cache))
    }

    /// Hessian action `H(v) vtilde` using the cached iteration data. Also
    /// returns the transport-phase and whole-call counter deltas.
    pub fn hessian_matvec(
        &self,
        vtilde: &VectorField,
        cache: &IterationCache,
    ) -> Result<(VectorField, CounterSnapshot, CounterSnapshot)> {
        let before = self.ops.counters().snapshot();
        let inc_state = solve_inc_state_with(self.ops, vtilde, &cache.dep_fwd, &cache.state)?;
        let lambda = match self.config.mode {
            HessianMode::FullNewton => Some(&cache.adjoint),
            HessianMode::GaussNewton => None,
        };
        let inc_adjoint = solve_inc_adjoint_with(
            self.ops,
            &cache.v,
            vtilde,
            &cache.dep_bwd,
            lambda,
            inc_state.last(),
            self.config.mode,
        )?;
        let transport = self.ops.counters().snapshot().delta_since(&before);

        // b_tilde = int lambda_tilde grad rho (+ lambda grad rho_tilde in
        // full Newton) dt
        let mut b = self.time_quadrature(&inc_adjoint, &cache.state)?;
        if self.config.mode == HessianMode::FullNewton {
            b.axpy(1.0, &self.time_quadrature(&cache.adjoint, &inc_state)?)?;
        }
        let mut hv = self.ops.spectral.biharmonic(vtilde);
        hv.scale(self.config.beta);
        hv.axpy(1.0, &self.project(b))?;
        let full = self.ops.counters().snapshot().delta_since(&before);
        Ok((hv, transport, full))
    }

    /// Preconditioner application: inverse biharmonic scaled by `1/beta`,
    /// Leray-projected in incompressible mode so iterates stay in the
    /// divergence-free subspace.
    fn precondition(&self, r: &VectorField) -> Result<VectorField> {
        let z = self.ops.spectral.inv_biharmonic(r, self.config.beta)?;
        Ok(self.project(z))
    }

    /// Inexact PCG for `H s = -g`, stopping when the preconditioned residual
    /// norm falls below `eta` times its initial value or `max_krylov` is
    /// reached. A non-positive curvature direction truncates and returns the
    /// current iterate.
    pub fn pcg(
        &self,
        g: &VectorField,
        cache: &IterationCache,
        eta: f64,
        stats: &mut PcgStats,
    ) -> Result<VectorField> {
        let mut s = VectorField::zeros(self.ops.grid());
        let mut r = g.clone();
        r.scale(-1.0);
        if self.config.incompressible {
            r = self.ops.spectral.leray_project(&r);
        }
        let mut z = self.precondition(&r)?;
        let mut rz = r.inner(&z)?;
        let norm0 = rz.max(0.0).sqrt();
        if norm0 == 0.0 {
            return Ok(s);
        }
        let mut p = z.clone();
        for _ in 0..self.config.max_krylov {
            if rz.max(0.0).sqrt() <= eta * norm0 {
                break;
            }
            let (hp, transport, full) = self.hessian_matvec(&p, cache)?;
            stats.matvec_transport.record(transport);
            stats.matvec_full.record(full);
            stats.iterations += 1;
            let php = p.inner(&hp)?;
            if php <= 0.0 {
                stats.indefinite_hit = true;
                break;
            }
            let alpha = rz / php;
            s.axpy(alpha, &p)?;
            r.axpy(-alpha, &hp)?;
            z = self.precondition(&r)?;
            let rz_new = r.inner(&z)?;
            let beta = rz_new / rz;
            let mut p_new = z;
            p_new.axpy(beta, &p)?;
            p = p_new;
            rz = rz_new;
        }
        stats.final_rel_residual = rz.max(0.0).sqrt() / norm0;
        Ok(s)
    }

    /// Armijo-globalized inexact Newton loop from `v = 0`.
    pub fn solve(&self) -> Result<(VectorField, SolverReport)> {
        self.solve_from(VectorField::zeros(self.ops.grid()))
    }

    /// Same, warm-started from `v0` (used by beta continuation).
    pub fn solve_from(&self, v0: VectorField) -> Result<(VectorField, SolverReport)> {
        let start = Instant::now();
        let cfg = &self.config;
        let mut v = v0;
        let mut report = SolverReport {
            records: Vec::new(),
            termination: Termination::IterationLimit,
            newton_iterations: 0,
            total_matvecs: 0,
            line_search_evals: 0,
            gradient_evals: 0,
            pcg_indefinite_hits: 0,
            matvec_transport: PhaseStats::default(),
            matvec_full: PhaseStats::default(),
            div_ratios: Vec::new(),
            final_rel_grad: 0.0,
            wall_seconds: 0.0,
            n_t: cfg.n_t,
            beta: cfg.beta,
        };

        let eval = self.objective_eval(&v)?;
        let mut obj = eval.value;
        report.gradient_evals += 1;
        let (mut g, mut cache) = self.gradient_from_eval(&v, eval)?;
        let g0_norm = g.norm();
        report.records.push(IterationRecord {
            iter: 0,
            j: obj.j,
            misfit: obj.misfit,
            reg: obj.reg,
            rel_grad: if g0_norm == 0.0 { 0.0 } else { 1.0 },
            pcg_iters: 0,
            step_length: 0.0,
            cumulative_matvecs: 0,
        });
        report.div_ratios.push(div_ratio(self.ops, &v));

        if g0_norm == 0.0 {
            report.termination = Termination::Converged;
            report.wall_seconds = start.elapsed().as_secs_f64();
            return Ok((v, report));
        }

        let mut rel = 1.0;
        for iter in 1..=cfg.max_newton {
            if rel <= cfg.g_tol {
                report.termination = Termination::Converged;
                break;
            }
            // quadratic forcing with safeguard cap
            let eta = rel.min(0.5).powi(2);
            let mut pcg_stats = PcgStats::default();
            let s = self.pcg(&g, &cache, eta, &mut pcg_stats)?;
            report.total_matvecs += pcg_stats.iterations;
            report.matvec_transport = report.matvec_transport.merge(pcg_stats.matvec_transport);
            report.matvec_full = report.matvec_full.merge(pcg_stats.matvec_full);
            if pcg_stats.indefinite_hit {
                report.pcg_indefinite_hits += 1;
            }

            let gs = g.inner(&s)?;
            if !(gs < 0.0) {
                report.termination = Termination::LineSearchFailure;
                break;
            }

            // Armijo backtracking; every trial solves the state at v+alpha*s
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..=cfg.max_backtracks {
                let mut trial = v.clone();
                trial.axpy(alpha, &s)?;
                let trial_eval = self.objective_eval(&trial)?;
                report.line_search_evals += 1;
                if trial_eval.value.j <= obj.j + cfg.armijo_c1 * alpha * gs {
                    accepted = Some((trial, trial_eval));
                    break;
                }
                alpha *= cfg.armijo_shrink;
            }
            let Some((v_new, eval_new)) = accepted else {
                report.termination = Termination::LineSearchFailure;
                break;
            };
            v = v_new;
            obj = eval_new.value;
            report.gradient_evals += 1;
            let (g_new, cache_new) = self.gradient_from_eval(&v, eval_new)?;
            g = g_new;
            cache = cache_new;
            rel = g.norm() / g0_norm;
            report.newton_iterations = iter;
            report.records.push(IterationRecord {
                iter,
                j: obj.j,
                misfit: obj.misfit,
                reg: obj.reg,
                rel_grad: rel,
                pcg_iters: pcg_stats.iterations,
                step_length: alpha,
                cumulative_matvecs: report.total_matvecs,
            });
            report.div_ratios.push(div_ratio(self.ops, &v));
        }
        if rel <= cfg.g_tol {
            report.termination = Termination::Converged;
        }
        report.final_rel_grad = rel;
        report.wall_seconds = start.elapsed().as_secs_f64();
        Ok((v, report))
    }
}

/// `||div v|| / ||v||`, zero for a zero velocity.
pub fn div_ratio(ops: &Operators, v: &VectorField) -> f64 {
    let vn = v.norm();
    if vn == 0.0 {
        return 0.0;
    }
    ops.spectral.divergence(v).norm() / vn
}

/// Outcome of a continuation run: the accepted velocity, one report per
/// completed stage, and the betas that passed the map-quality gate.
pub struct ContinuationOutcome {
    pub v: VectorField,
    pub reports: Vec<SolverReport>,
    pub accepted_betas: Vec<f64>,
    pub stopped_early: bool,
}

/// Parameter continuation over a strictly decreasing `beta` schedule,
/// warm-starting each stage from the previous solution. A stage whose
/// deformation map violates `min det(grad y1) > det_floor` is rejected and
/// continuation stops, returning the last accepted velocity.
pub fn beta_continuation(
    ops: &Operators,
    problem: &RegistrationProblem,
    base: &SolverConfig,
    schedule: &[f64],
    det_floor: f64,
) -> Result<ContinuationOutcome> {
    if schedule.is_empty() {
        return Err(Error::InvalidSchedule { reason: "empty" });
    }
    if schedule.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::InvalidSchedule { reason: "betas must be positive" });
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidSchedule { reason: "betas must be strictly decreasing" });
    }

    let mut v = VectorField::zeros(ops.grid());
    let mut out = ContinuationOutcome {
        v: v.clone(),
        reports: Vec::new(),
        accepted_betas: Vec::new(),
        stopped_early: false,
    };
    for &beta in schedule {
        let cfg = SolverConfig { beta, ..base.clone() };
        let solver = NewtonSolver::new(ops, problem, cfg)?;
        let (v_new, report) = solver.solve_from(v.clone())?;
        let dep = departure_points(ops, &v_new, base.n_t, Direction::Forward)?;
        let y1 = deformation_map_with(ops, &dep, &v_new)?;
        let det = det_deformation_gradient(ops, &y1)?;
        let det_min = det.values().iter().cloned().fold(f64::INFINITY, f64::min);
        out.reports.push(report);
        if det_min <= det_floor {
            out.stopped_early = true;
            break;
        }
        v = v_new;
        out.accepted_betas.push(beta);
        out.v = v.clone();
    }
    Ok(out)
}
