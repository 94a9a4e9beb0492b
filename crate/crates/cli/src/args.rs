//! Command-line flags.

use std::path::PathBuf;

use diffreg_core::transport::HessianMode;

pub const USAGE: &str = "\
diffreg - large-deformation diffeomorphic registration on periodic grids

USAGE:
  diffreg --synthetic --n N [options] --out DIR
  diffreg --template T.dvf --reference R.dvf [options] --out DIR

PROBLEM SELECTION (exactly one):
  --synthetic              analytic benchmark problem
  --template PATH          template image (DVF1 scalar volume)
  --reference PATH         reference image (DVF1 scalar volume)

GRID (synthetic mode only; file mode takes dims from the volumes):
  --n N                    isotropic grid, N points per axis
  --dims N1 N2 N3          anisotropic grid

SOLVER:
  --beta F                 regularization weight (default 1e-2)
  --beta-schedule F,F,...  strictly decreasing continuation schedule
                           (conflicts with --beta)
  --nt K                   time steps (default 4)
  --gtol F                 relative gradient tolerance (default 1e-2)
  --max-newton K           Newton iteration cap (default 50)
  --max-krylov K           PCG iteration cap per solve (default 100)
  --incompressible         enforce div v = 0 (volume-preserving map)
  --mode M                 gauss-newton | full-newton (default gauss-newton)
  --det-floor F            continuation map-quality bound on min det (default 0)

EXECUTION:
  --tasks P1xP2            virtual pencil partition (default 1x1)
  --pad K                  padding cells per side for file inputs
                           (default max-dim/8)
  --seed U                 seed echoed to metadata, for randomized tooling
  --out DIR                output directory (required)

OUTPUTS: velocity.dvf, deformed_template.dvf, residual.dvf, det_grad.dvf,
convergence.csv, metadata.txt. Exit status: 0 converged, 1 input error,
2 iteration limit or failed line search.
";

#[derive(Debug, Clone)]
pub enum ProblemSource {
    Synthetic,
    Files { template: PathBuf, reference: PathBuf },
}

#[derive(Debug, Clone)]
pub struct Args {
    pub source: ProblemSource,
    pub dims: Option<[usize; 3]>,
    pub beta: f64,
    pub beta_schedule: Option<Vec<f64>>,
    pub n_t: usize,
    pub g_tol: f64,
    pub max_newton: usize,
    pub max_krylov: usize,
    pub incompressible: bool,
    pub mode: HessianMode,
    pub det_floor: f64,
    pub tasks: (usize, usize),
    pub pad: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn parse(argv: &[String]) -> Result<Args, String> {
    let mut synthetic = false;
    let mut template: Option<PathBuf> = None;
    let mut reference: Option<PathBuf> = None;
    let mut n: Option<usize> = None;
    let mut dims: Option<[usize; 3]> = None;
    let mut beta: Option<f64> = None;
    let mut beta_schedule: Option<Vec<f64>> = None;
    let mut n_t: usize = 4;
    let mut g_tol: f64 = 1e-2;
    let mut max_newton: usize = 50;
    let mut max_krylov: usize = 100;
    let mut incompressible = false;
    let mut mode = HessianMode::GaussNewton;
    let mut det_floor: f64 = 0.0;
    let mut tasks = (1usize, 1usize);
    let mut pad: Option<usize> = None;
    let mut seed: u64 = 0;
    let mut out: Option<PathBuf> = None;

    let mut it = argv.iter();
    while let Some(flag) = it.next() {
        let mut value = || {
            it.next().map(String::as_str).ok_or_else(|| format!("{flag} requires a value"))
        };
        match flag.as_str() {
            "--synthetic" => synthetic = true,
            "--template" => template = Some(PathBuf::from(value()?)),
            "--reference" => reference = Some(PathBuf::from(value()?)),
            "--n" => n = Some(parse_num(value()?, "--n")?),
            "--dims" => {
                let mut d = [0usize; 3];
                for slot in &mut d {
                    *slot = parse_num(value()?, "--dims")?;
                }
                dims = Some(d);
            }
            "--beta" => beta = Some(parse_float(value()?, "--beta")?),
            "--beta-schedule" => {
                let list = value()?
                    .split(',')
                    .map(|s| parse_float(s, "--beta-schedule"))
                    .collect::<Result<Vec<_>, _>>()?;
                beta_schedule = Some(list);
            }
            "--nt" => n_t = parse_num(value()?, "--nt")?,
            "--gtol" => g_tol = parse_float(value()?, "--gtol")?,
            "--max-newton" => max_newton = parse_num(value()?, "--max-newton")?,
            "--max-krylov" => max_krylov = parse_num(value()?, "--max-krylov")?,
            "--incompressible" => incompressible = true,
            "--mode" => {
                mode = match value()? {
                    "gauss-newton" => HessianMode::GaussNewton,
                    "full-newton" => HessianMode::FullNewton,
                    other => return Err(format!("unknown mode '{other}'")),
                }
            }
            "--det-floor" => det_floor = parse_float(value()?, "--det-floor")?,
            "--tasks" => {
                let v = value()?;
                let (a, b) = v
                    .split_once('x')
                    .ok_or_else(|| format!("--tasks expects P1xP2, got '{v}'"))?;
                tasks = (parse_num(a, "--tasks")?, parse_num(b, "--tasks")?);
            }
            "--pad" => pad = Some(parse_num(value()?, "--pad")?),
            "--seed" => seed = parse_num::<u64>(value()?, "--seed")?,
            "--out" => out = Some(PathBuf::from(value()?)),
            "--help" | "-h" => return Err(String::new()),
            other => return Err(format!("unknown flag '{other}'")),
        }
    }

    let source = match (synthetic, template, reference) {
        (true, None, None) => ProblemSource::Synthetic,
        (false, Some(t), Some(r)) => ProblemSource::Files { template: t, reference: r },
        (true, _, _) => return Err("--synthetic conflicts with --template/--reference".into()),
        (false, _, _) => {
            return Err("need --synthetic or both --template and --reference".into())
        }
    };

    let dims = match (&source, n, dims) {
        (ProblemSource::Synthetic, Some(n), None) => Some([n, n, n]),
        (ProblemSource::Synthetic, None, Some(d)) => Some(d),
        (ProblemSource::Synthetic, Some(_), Some(_)) => {
            return Err("--n conflicts with --dims".into())
        }
        (ProblemSource::Synthetic, None, None) => {
            return Err("synthetic mode needs --n or --dims".into())
        }
        (ProblemSource::Files { .. }, None, None) => None,
        (ProblemSource::Files { .. }, _, _) => {
            return Err("file mode takes grid dims from the volumes; drop --n/--dims".into())
        }
    };

    if beta.is_some() && beta_schedule.is_some() {
        return Err("--beta conflicts with --beta-schedule".into());
    }

    Ok(Args {
        source,
        dims,
        beta: beta.unwrap_or(1e-2),
        beta_schedule,
        n_t,
        g_tol,
        max_newton,
        max_krylov,
        incompressible,
        mode,
        det_floor,
        tasks,
        pad,
        seed,
        out: out.ok_or("--out DIR is required")?,
    })
}

fn parse_num<T: std::str::FromStr>(s: &str, flag: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("{flag}: cannot parse '{s}'"))
}

fn parse_float(s: &str, flag: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{flag}: cannot parse '{s}'"))?;
    if !v.is_finite() {
        return Err(format!("{flag}: value must be finite"));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Result<Args, String> {
        parse(&s.split_whitespace().map(String::from).collect::<Vec<_>>())
    }

    #[test]
    fn parses_synthetic_run() {
        let a = args("--synthetic --n 64 --beta 1e-2 --nt 4 --gtol 1e-2 --out runs/s64").unwrap();
        assert!(matches!(a.source, ProblemSource::Synthetic));
        assert_eq!(a.dims, Some([64, 64, 64]));
        assert_eq!(a.n_t, 4);
        assert_eq!(a.tasks, (1, 1));
    }

    #[test]
    fn defaults_applied() {
        let a = args("--synthetic --n 16 --out o").unwrap();
        assert_eq!(a.n_t, 4);
        assert_eq!(a.g_tol, 1e-2);
        assert_eq!(a.max_newton, 50);
        assert_eq!(a.max_krylov, 100);
        assert_eq!(a.beta, 1e-2);
    }

    #[test]
    fn conflicting_sources_rejected() {
        assert!(args("--synthetic --template a.dvf --reference b.dvf --n 8 --out o").is_err());
        assert!(args("--template a.dvf --out o").is_err());
        assert!(args("--synthetic --out o").is_err());
    }

    #[test]
    fn beta_schedule_parsing() {
        let a = args("--synthetic --n 16 --beta-schedule 1e-1,1e-2,1e-3 --out o").unwrap();
        assert_eq!(a.beta_schedule, Some(vec![0.1, 0.01, 0.001]));
        assert!(args("--synthetic --n 16 --beta 1e-2 --beta-schedule 1e-1,1e-2 --out o").is_err());
    }

    #[test]
    fn tasks_and_dims_parsing() {
        let a = args("--synthetic --dims 16 32 8 --tasks 2x4 --out o").unwrap();
        assert_eq!(a.dims, Some([16, 32, 8]));
        assert_eq!(a.tasks, (2, 4));
        assert!(args("--synthetic --n 16 --tasks 4 --out o").is_err());
    }
}
