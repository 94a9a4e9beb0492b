//! Run orchestration: problem setup, solve, output files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use diffreg_core::cost_model::{predict, CostModel};
use diffreg_core::interp::PencilPartition;
use diffreg_core::optimizer::{
    beta_continuation, NewtonSolver, SolverConfig, SolverReport, Termination,
};
use diffreg_core::problems::{
    make_synthetic, preprocess, quality_metrics, Provenance, RegistrationProblem,
};
use diffreg_core::transport::{deformation_map, det_deformation_gradient, solve_state};
use diffreg_core::{Grid, Operators, ScalarField, VectorField};

use crate::args::{Args, ProblemSource};
use crate::volume::{self, Volume};

/// Fixed machine constants for the cost-model report: 1 microsecond latency,
/// 1 nanosecond per value bandwidth.
const TAU_LAT: f64 = 1e-6;
const TAU_BAN: f64 = 1e-9;

pub enum RunError {
    Input(String),
    Internal(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Input(m) => write!(f, "{m}"),
            RunError::Internal(m) => write!(f, "{m}"),
        }
    }
}

impl From<diffreg_core::Error> for RunError {
    fn from(e: diffreg_core::Error) -> Self {
        RunError::Input(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Internal(format!("i/o: {e}"))
    }
}

impl From<volume::VolumeError> for RunError {
    fn from(e: volume::VolumeError) -> Self {
        RunError::Input(e.to_string())
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

/// Executes one registration run. Returns the process exit code: 0 when the
/// solver converged (every continuation stage converged and passed the map
/// gate), 2 otherwise. Input problems map to `Err`, which the caller turns
/// into exit code 1.
pub fn run(args: &Args) -> Result<i32, RunError> {
    let start = Instant::now();

    // problem setup
    let (ops, problem, pad) = match &args.source {
        ProblemSource::Synthetic => {
            let [n1, n2, n3] = args.dims.expect("parser guarantees dims in synthetic mode");
            let grid = Grid::new(n1, n2, n3)?;
            let partition = PencilPartition::new(grid, args.tasks.0, args.tasks.1)?;
            let ops = Operators::new(partition);
            let (problem, _v_star) = make_synthetic(&ops, args.incompressible, args.n_t)?;
            (ops, problem, 0usize)
        }
        ProblemSource::Files { template, reference } => {
            let t = match volume::read_volume(template)? {
                Volume::Scalar(f) => f,
                Volume::Vector(_) => {
                    return Err(RunError::Input(format!(
                        "{}: template must be a scalar volume",
                        template.display()
                    )))
                }
            };
            let r = match volume::read_volume(reference)? {
                Volume::Scalar(f) => f,
                Volume::Vector(_) => {
                    return Err(RunError::Input(format!(
                        "{}: reference must be a scalar volume",
                        reference.display()
                    )))
                }
            };
            if t.grid() != r.grid() {
                return Err(RunError::Input(format!(
                    "dimension mismatch: template {:?} vs reference {:?}",
                    t.grid().dims(),
                    r.grid().dims()
                )));
            }
            let max_dim = *t.grid().dims().iter().max().expect("three dims");
            let pad = args.pad.unwrap_or(max_dim / 8);
            let (t_pre, _) = preprocess(&t, pad, None)?;
            let (r_pre, _) = preprocess(&r, pad, None)?;
            let grid = t_pre.grid();
            let partition = PencilPartition::new(grid, args.tasks.0, args.tasks.1)?;
            let ops = Operators::new(partition);
            let mut problem =
                RegistrationProblem::from_fields(r_pre, t_pre, args.incompressible)?;
            problem.provenance = Provenance::Files {
                template: template.display().to_string(),
                reference: reference.display().to_string(),
                pad,
            };
            (ops, problem, pad)
        }
    };

    let config = SolverConfig {
        beta: args.beta,
        n_t: args.n_t,
        g_tol: args.g_tol,
        max_newton: args.max_newton,
        max_krylov: args.max_krylov,
        mode: args.mode,
        incompressible: args.incompressible,
        ..Default::default()
    };

    // solve
    let (v, reports, all_converged) = match &args.beta_schedule {
        Some(schedule) => {
            let outcome = beta_continuation(&ops, &problem, &config, schedule, args.det_floor)?;
            let converged = !outcome.stopped_early
                && outcome.reports.iter().all(|r| r.termination == Termination::Converged)
                && !outcome.accepted_betas.is_empty();
            (outcome.v, outcome.reports, converged)
        }
        None => {
            let solver = NewtonSolver::new(&ops, &problem, config.clone())?;
            let (v, report) = solver.solve()?;
            let converged = report.termination == Termination::Converged;
            (v, vec![report], converged)
        }
    };

    // post-processing
    let state = solve_state(&ops, &v, &problem.template, args.n_t)?;
    let rho1 = state.last();
    let y1 = deformation_map(&ops, &v, args.n_t)?;
    let det = det_deformation_gradient(&ops, &y1)?;
    let metrics = quality_metrics(&ops, &problem, &v, &det, rho1)?;

    // deformed template: template interpolated at the map's points
    let n_points = ops.grid().len();
    let mut points = Vec::with_capacity(n_points);
    for i in 0..n_points {
        points.push([
            y1.component(0).values()[i],
            y1.component(1).values()[i],
            y1.component(2).values()[i],
        ]);
    }
    let plan = ops.interp.build_plan(&points)?;
    let deformed =
        ScalarField::from_values(ops.grid(), ops.interp.apply(&problem.template, &plan)?)?;

    let mut residual = rho1.clone();
    residual.axpy(-1.0, &problem.reference)?;
    for x in residual.values_mut() {
        *x = x.abs();
    }

    // outputs
    fs::create_dir_all(&args.out)?;
    volume::write_vector(&args.out.join("velocity.dvf"), &v)?;
    volume::write_scalar(&args.out.join("deformed_template.dvf"), &deformed)?;
    volume::write_scalar(&args.out.join("residual.dvf"), &residual)?;
    volume::write_scalar(&args.out.join("det_grad.dvf"), &det)?;
    write_csv(&args.out.join("convergence.csv"), &reports)?;
    write_metadata(
        &args.out.join("metadata.txt"),
        args,
        &ops,
        &problem,
        pad,
        &reports,
        &metrics,
        &v,
    )?;

    let last = reports.last().expect("at least one report");
    println!(
        "{}: {} newton iterations, {} matvecs, rel grad {:.3e}, relative misfit {:.3e}, \
         min det {:.3e}, wall {:.2}s",
        if all_converged { "converged" } else { "not converged" },
        reports.iter().map(|r| r.newton_iterations).sum::<usize>(),
        reports.iter().map(|r| r.total_matvecs).sum::<usize>(),
        last.final_rel_grad,
        metrics.relative_misfit,
        metrics.det_min,
        start.elapsed().as_secs_f64(),
    );

    Ok(if all_converged { 0 } else { 2 })
}

fn write_csv(path: &Path, reports: &[SolverReport]) -> Result<(), RunError> {
    let mut s = String::from("iter,J,misfit,reg,rel_grad,pcg_iters,step_length,cumulative_matvecs\n");
    let mut iter = 0usize;
    let mut matvec_base = 0usize;
    for report in reports {
        for r in &report.records {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                iter,
                fmt_f64(r.j),
                fmt_f64(r.misfit),
                fmt_f64(r.reg),
                fmt_f64(r.rel_grad),
                r.pcg_iters,
                fmt_f64(r.step_length),
                matvec_base + r.cumulative_matvecs
            )
            .expect("string write");
            iter += 1;
        }
        matvec_base += report.total_matvecs;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(s.as_bytes())?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_metadata(
    path: &Path,
    args: &Args,
    ops: &Operators,
    problem: &RegistrationProblem,
    pad: usize,
    reports: &[SolverReport],
    metrics: &diffreg_core::problems::QualityMetrics,
    v: &VectorField,
) -> Result<(), RunError> {
    let [n1, n2, n3] = ops.grid().dims();
    let last = reports.last().expect("at least one report");
    let counters = ops.counters().snapshot();
    // cost model N: per-axis size (max axis for anisotropic grids)
    let n_model = n1.max(n2).max(n3);
    let cost = predict(&CostModel {
        n: n_model,
        p: args.tasks.0 * args.tasks.1,
        n_t: args.n_t,
        tau_lat: TAU_LAT,
        tau_ban: TAU_BAN,
    })?;

    let mut s = String::new();
    let kv = |s: &mut String, k: &str, val: String| {
        writeln!(s, "{k}={val}").expect("string write");
    };
    kv(&mut s, "tool", "diffreg".into());
    kv(
        &mut s,
        "problem",
        match &problem.provenance {
            Provenance::Synthetic { incompressible, n_t } => {
                format!("synthetic(incompressible={incompressible},nt={n_t})")
            }
            Provenance::Files { template, reference, pad } => {
                format!("files(template={template},reference={reference},pad={pad})")
            }
            Provenance::InMemory => "in-memory".into(),
        },
    );
    kv(&mut s, "grid", format!("{n1}x{n2}x{n3}"));
    kv(&mut s, "pad", pad.to_string());
    kv(&mut s, "tasks", format!("{}x{}", args.tasks.0, args.tasks.1));
    match &args.beta_schedule {
        Some(sched) => kv(
            &mut s,
            "beta_schedule",
            sched.iter().map(|b| fmt_f64(*b)).collect::<Vec<_>>().join(","),
        ),
        None => kv(&mut s, "beta", fmt_f64(args.beta)),
    }
    kv(&mut s, "nt", args.n_t.to_string());
    kv(&mut s, "gtol", fmt_f64(args.g_tol));
    kv(&mut s, "max_newton", args.max_newton.to_string());
    kv(&mut s, "max_krylov", args.max_krylov.to_string());
    kv(&mut s, "incompressible", args.incompressible.to_string());
    kv(
        &mut s,
        "hessian_mode",
        match args.mode {
            diffreg_core::transport::HessianMode::GaussNewton => "gauss-newton".into(),
            diffreg_core::transport::HessianMode::FullNewton => "full-newton".into(),
        },
    );
    kv(&mut s, "det_floor", fmt_f64(args.det_floor));
    kv(&mut s, "seed", args.seed.to_string());
    kv(
        &mut s,
        "termination",
        match last.termination {
            Termination::Converged => "converged".into(),
            Termination::IterationLimit => "iteration-limit".into(),
            Termination::LineSearchFailure => "line-search-failure".into(),
        },
    );
    kv(
        &mut s,
        "newton_iterations",
        reports.iter().map(|r| r.newton_iterations).sum::<usize>().to_string(),
    );
    kv(&mut s, "total_matvecs", reports.iter().map(|r| r.total_matvecs).sum::<usize>().to_string());
    kv(
        &mut s,
        "line_search_evals",
        reports.iter().map(|r| r.line_search_evals).sum::<usize>().to_string(),
    );
    kv(&mut s, "final_rel_grad", fmt_f64(last.final_rel_grad));
    if let Some(rec) = last.records.last() {
        kv(&mut s, "final_j", fmt_f64(rec.j));
        kv(&mut s, "final_misfit", fmt_f64(rec.misfit));
        kv(&mut s, "final_reg", fmt_f64(rec.reg));
    }
    kv(&mut s, "relative_misfit", fmt_f64(metrics.relative_misfit));
    kv(&mut s, "det_min", fmt_f64(metrics.det_min));
    kv(&mut s, "det_max", fmt_f64(metrics.det_max));
    kv(&mut s, "det_mean", fmt_f64(metrics.det_mean));
    kv(&mut s, "max_abs_det_minus_one", fmt_f64(metrics.max_abs_det_minus_one));
    kv(&mut s, "div_v_norm", fmt_f64(metrics.div_v_norm));
    kv(&mut s, "div_v_ratio", fmt_f64(metrics.div_v_ratio));
    kv(&mut s, "diffeomorphic", metrics.diffeomorphic.to_string());
    kv(&mut s, "velocity_norm", fmt_f64(v.norm()));
    if last.matvec_transport.count > 0 {
        kv(&mut s, "matvec_transport_fft_min", last.matvec_transport.fft_min.to_string());
        kv(&mut s, "matvec_transport_fft_max", last.matvec_transport.fft_max.to_string());
        kv(&mut s, "matvec_transport_interp_min", last.matvec_transport.interp_min.to_string());
        kv(&mut s, "matvec_transport_interp_max", last.matvec_transport.interp_max.to_string());
    }
    kv(&mut s, "fft_applications_total", counters.fft_applications.to_string());
    kv(&mut s, "interp_applications_total", counters.interp_applications.to_string());
    kv(&mut s, "plan_builds_total", counters.plan_builds.to_string());
    kv(&mut s, "departure_builds_total", counters.departure_builds.to_string());
    kv(&mut s, "cost_model_n", n_model.to_string());
    kv(&mut s, "cost_model_tau_lat", fmt_f64(TAU_LAT));
    kv(&mut s, "cost_model_tau_ban", fmt_f64(TAU_BAN));
    kv(&mut s, "cost_tflop_per_matvec", fmt_f64(cost.t_flop));
    kv(&mut s, "cost_tmpi_per_matvec", fmt_f64(cost.t_mpi));
    kv(&mut s, "cost_memory_values_per_task", fmt_f64(cost.memory_values_per_task));

    let mut f = fs::File::create(path)?;
    f.write_all(s.as_bytes())?;
    Ok(())
}
