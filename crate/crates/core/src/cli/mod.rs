//! Command-line front end: configuration, integrator registry, CSV output.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use thiserror::Error;

use crate::analysis::checks::{self, CheckResult, Suite};
use crate::analysis::{self, ConvergenceReport, Integrator, ReferenceSpec, Trajectory};
use crate::error::Error;
use crate::gni_flat::{FlatInitial, FlatStepper, GniGeneric, Scheme};
use crate::gni_reduced::chaplygin::Planar;
use crate::gni_reduced::{ChaplyginGni, ChaplyginParams, ReducedInitial, ReducedRattle};
use crate::lie_so3::{AlgebraVec, Cayley, Exponential};
use crate::model::{systems, FlatSystem};
use crate::numerics::NewtonConfig;

pub mod config;

pub use config::{
    emit_config, parse_config, ConfigError, Horizon, IntegratorKind, Potential, ReferenceKind, RetractionKind,
    RunConfig, StepSpec, SystemConfig,
};

/// Environment variable overriding the default Newton tolerance.
pub const NEWTON_TOL_ENV: &str = "GNI_NEWTON_TOL";

/// Tolerance of the `adjoint` command.
pub const ADJOINT_TOL: f64 = 1e-9;
pub const ADJOINT_SAMPLES: usize = 50;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Solver(#[from] Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 2 for anything wrong with the input, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) | Self::Solver(_) | Self::Failed(_) => 1,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Validation { field: field.into(), message: message.into() })
}

pub fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| invalid("--config", format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_config(&text)?)
}

/// Default, then the environment override, then the config key.
pub fn newton_config(cfg: &RunConfig) -> Result<NewtonConfig, CliError> {
    let mut newton = NewtonConfig::default();
    if let Ok(v) = std::env::var(NEWTON_TOL_ENV) {
        let tol: f64 = v
            .trim()
            .parse()
            .ok()
            .filter(|t: &f64| *t > 0.0)
            .ok_or_else(|| invalid(NEWTON_TOL_ENV, format!("not a positive number: {v}")))?;
        newton.residual_tol = tol;
    }
    if let Some(t) = cfg.integrator.newton_tol {
        newton.residual_tol = t;
    }
    Ok(newton)
}

pub fn flat_system(cfg: &SystemConfig) -> Option<FlatSystem> {
    match *cfg {
        SystemConfig::NonholonomicParticle { potential, affine_rate } => {
            Some(systems::nonholonomic_particle(potential == Potential::Harmonic, affine_rate))
        }
        SystemConfig::Constrained2d { affine_rate } => Some(systems::constrained_2d(affine_rate)),
        SystemConfig::Chaplygin { .. } => None,
    }
}

pub fn chaplygin_params(cfg: &SystemConfig) -> Option<ChaplyginParams> {
    match *cfg {
        SystemConfig::Chaplygin { mass, radius, table_rate, inertia } => {
            Some(ChaplyginParams { mass, radius, table_rate, inertia })
        }
        _ => None,
    }
}

/// Initial data with defaults filled in.
pub fn flat_initial(cfg: &RunConfig) -> FlatInitial {
    let (q, p) = match cfg.system {
        SystemConfig::Constrained2d { affine_rate } => (vec![1.0, 0.0], vec![0.5 - affine_rate, -1.0]),
        _ => (vec![1.0, 0.0, 0.0], vec![0.3, 1.0, 0.0]),
    };
    let pick = |v: &Option<Vec<f64>>, d: Vec<f64>| DVector::from_vec(v.clone().unwrap_or(d));
    FlatInitial { q: pick(&cfg.initial.q0, q), p: pick(&cfg.initial.p0, p) }
}

pub fn reduced_initial(cfg: &RunConfig) -> ReducedInitial {
    let q = cfg.initial.q0.clone().unwrap_or_else(|| vec![1.0, 1.0]);
    let w = cfg.initial.w0.clone().unwrap_or_else(|| vec![0.0, 2.0, 0.0]);
    ReducedInitial {
        x: DVector::from_vec(q),
        x_dot: cfg.initial.v0.clone().map(DVector::from_vec),
        omega: AlgebraVec::new(w[0], w[1], w[2]),
    }
}

/// A registry entry bound to its system and initial data.
pub enum Built {
    Flat(FlatStepper, FlatInitial),
    Generic(GniGeneric, FlatInitial),
    Reduced(ReducedRattle, ReducedInitial),
    Chaplygin(ChaplyginGni, ReducedInitial),
}

pub fn build(cfg: &RunConfig) -> Result<Built, CliError> {
    let newton = newton_config(cfg)?;
    let kind = cfg.integrator.kind;
    if let Some(sys) = flat_system(&cfg.system) {
        let init = flat_initial(cfg);
        let scheme = match kind {
            IntegratorKind::EulerA => Scheme::EulerA,
            IntegratorKind::EulerB => Scheme::EulerB,
            IntegratorKind::Rattle | IntegratorKind::RattleAffine => Scheme::Rattle,
            IntegratorKind::EulerAB => Scheme::ComposedAB,
            IntegratorKind::GniGeneric => {
                return Ok(Built::Generic(GniGeneric { sys, lagrangian: cfg.integrator.lagrangian, newton }, init));
            }
            IntegratorKind::ReducedRattle | IntegratorKind::ChaplyginGni => {
                return Err(invalid("integrator.name", "needs the chaplygin system"));
            }
        };
        return Ok(Built::Flat(FlatStepper::new(sys, scheme), init));
    }
    let params = chaplygin_params(&cfg.system).expect("non-flat system");
    params.validate()?;
    let mut init = reduced_initial(cfg);
    match kind {
        IntegratorKind::ChaplyginGni => Ok(Built::Chaplygin(ChaplyginGni { params, newton }, init)),
        IntegratorKind::ReducedRattle => {
            if init.x_dot.is_none() && init.x.len() == 2 {
                let v = params.constraint_velocity(&Planar::new(init.x[0], init.x[1]), &init.omega);
                init.x_dot = Some(DVector::from_column_slice(v.as_slice()));
            }
            let mut integ = ReducedRattle::new(params.reduced_system(), newton)
                .with_shape_names(vec!["x".into(), "y".into()]);
            if cfg.integrator.retraction == RetractionKind::Exp {
                integ = integ.with_retraction(Arc::new(Exponential));
            } else {
                integ = integ.with_retraction(Arc::new(Cayley));
            }
            Ok(Built::Reduced(integ, init))
        }
        _ => Err(invalid("integrator.name", "needs a flat system")),
    }
}

/// Runs `$body` with `$integ` and `$init` bound to the concrete registry entry.
macro_rules! with_built {
    ($built:expr, |$integ:ident, $init:ident| $body:expr) => {
        match $built {
            Built::Flat($integ, $init) => $body,
            Built::Generic($integ, $init) => $body,
            Built::Reduced($integ, $init) => $body,
            Built::Chaplygin($integ, $init) => $body,
        }
    };
}

fn single_step(cfg: &RunConfig) -> Result<f64, CliError> {
    match cfg.step {
        StepSpec::Single(h) => Ok(h),
        StepSpec::List(_) => Err(invalid("run.h", "this command takes a single h")),
    }
}

fn step_count(cfg: &RunConfig, h: f64) -> Result<usize, CliError> {
    match cfg.horizon {
        Horizon::Steps(n) => Ok(n),
        Horizon::Time(t) => analysis::steps_for(t, h).map_err(|e| invalid("run.T", e.to_string())),
    }
}

fn io_err(e: io::Error) -> CliError {
    CliError::Io(e.to_string())
}

/// Writes `step,t,<components>,energy,constraint_res,newton_iters`.
pub fn write_trajectory<I: Integrator>(integ: &I, traj: &Trajectory<I::State>, w: &mut dyn Write) -> io::Result<()> {
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend(integ.component_names());
    header.extend(["energy", "constraint_res", "newton_iters"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for (k, ((s, t), d)) in traj.states.iter().zip(&traj.times).zip(&traj.diagnostics).enumerate() {
        write!(w, "{k},{t:.16e}")?;
        for c in integ.components(s, traj.h) {
            write!(w, ",{c:.16e}")?;
        }
        writeln!(w, ",{:.16e},{:.16e},{}", d.energy, d.constraint_residual, d.newton_iters)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub integrator: String,
    pub steps: usize,
    pub max_constraint_residual: f64,
    pub energy_drift: f64,
}

fn simulate_with<I: Integrator>(
    integ: &I,
    init: &I::Initial,
    h: f64,
    n: usize,
    csv: &mut dyn Write,
) -> Result<SimulateSummary, CliError> {
    let s0 = integ.initialize(init, h)?;
    let traj = analysis::run_from(integ, s0, h, n);
    write_trajectory(integ, &traj, csv).map_err(io_err)?;
    if let Some(e) = traj.failure {
        return Err(CliError::Solver(e));
    }
    let e0 = traj.diagnostics[0].energy;
    Ok(SimulateSummary {
        integrator: integ.name().to_string(),
        steps: traj.len() - 1,
        max_constraint_residual: traj.max_constraint_residual(),
        energy_drift: traj.diagnostics.iter().map(|d| (d.energy - e0).abs()).fold(0.0, f64::max),
    })
}

/// Integrates and writes the trajectory. On a solver failure the partial
/// trajectory is written before the error is returned.
pub fn simulate(cfg: &RunConfig, csv: &mut dyn Write) -> Result<SimulateSummary, CliError> {
    let h = single_step(cfg)?;
    let n = step_count(cfg, h)?;
    let built = build(cfg)?;
    let mut summary = with_built!(&built, |integ, init| simulate_with(integ, init, h, n, csv))?;
    summary.integrator = cfg.integrator.kind.name().to_string();
    Ok(summary)
}

fn sweep_with<I: Integrator>(
    integ: &I,
    init: &I::Initial,
    t_end: f64,
    h_list: &[f64],
    reference: &ReferenceSpec,
) -> Result<ConvergenceReport, CliError> {
    Ok(analysis::convergence_sweep(integ, init, t_end, h_list, reference)?)
}

/// Convergence sweep over `h_list` to the final time `T`.
pub fn sweep(cfg: &RunConfig) -> Result<ConvergenceReport, CliError> {
    let StepSpec::List(h_list) = &cfg.step else {
        return Err(invalid("run.h_list", "sweep needs h_list"));
    };
    let Horizon::Time(t_end) = cfg.horizon else {
        return Err(invalid("run.T", "sweep needs a final time T"));
    };
    let h_ref = h_list.last().expect("validated list") / cfg.reference_factor;
    let built = build(cfg)?;
    let reference = match cfg.reference {
        ReferenceKind::SameScheme => ReferenceSpec::SameScheme { h_ref },
        ReferenceKind::Rk4 => {
            let sys = flat_system(&cfg.system).ok_or_else(|| invalid("run.reference", "rk4 needs a flat system"))?;
            ReferenceSpec::Given(analysis::rk4_reference(&sys, &flat_initial(cfg), t_end, h_ref)?)
        }
    };
    with_built!(&built, |integ, init| sweep_with(integ, init, t_end, h_list, &reference))
}

fn slope_text(fit: &Option<analysis::SlopeFit>) -> String {
    match fit {
        Some(f) => format!("{:.16e}", f.slope),
        None => "below_noise_floor".into(),
    }
}

pub fn write_sweep(report: &ConvergenceReport, w: &mut dyn Write) -> io::Result<()> {
    writeln!(w, "h,err_pos,err_vel,err_energy")?;
    for i in 0..report.h.len() {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            report.h[i], report.err_pos[i], report.err_vel[i], report.err_energy[i]
        )?;
    }
    writeln!(w, "# slope_pos={}", slope_text(&report.slope_pos))?;
    writeln!(w, "# slope_vel={}", slope_text(&report.slope_vel))?;
    writeln!(w, "# slope_energy={}", slope_text(&report.slope_energy))?;
    if let Some(h) = report.reference_h {
        writeln!(w, "# reference_h={h:.16e}")?;
    }
    Ok(())
}

/// Adjoint defects of (A, B), (B, A) and (RATTLE, RATTLE) on random
/// admissible states of the configured flat system.
pub fn adjoint(cfg: &RunConfig, seed: u64) -> Result<Vec<(String, f64)>, CliError> {
    let h = single_step(cfg)?;
    let sys = flat_system(&cfg.system).ok_or_else(|| invalid("system.name", "adjoint checks need a flat system"))?;
    let pairs = [
        (Scheme::EulerA, Scheme::EulerB),
        (Scheme::EulerB, Scheme::EulerA),
        (Scheme::Rattle, Scheme::Rattle),
    ];
    pairs
        .iter()
        .map(|&(a, b)| {
            let d = checks::flat_adjoint_defect(&sys, a, b, ADJOINT_SAMPLES, h, seed)?;
            Ok((format!("{}/{}", a.name(), b.name()), d))
        })
        .collect()
}

pub fn format_check(r: &CheckResult) -> String {
    format!(
        "{} {}/{} value={:.3e} tol={:.0e}",
        if r.passed() { "PASS" } else { "FAIL" },
        r.suite,
        r.name,
        r.value,
        r.tol
    )
}

#[derive(Debug, Parser)]
#[command(name = "gni", version, about = "Constraint-preserving integrators for nonholonomic systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; overrides `out` in the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for randomized checks.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Check suite: lie, projectors, steppers, adjoint or all.
    #[arg(long)]
    pub suite: Option<String>,
    /// Suppress summary output.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory and write it as CSV.
    Simulate(CommonArgs),
    /// Final-time errors and fitted slopes over a list of step sizes.
    Sweep(CommonArgs),
    /// Run the invariant check suites.
    Check(CommonArgs),
    /// Adjointness defects of the flat schemes.
    Adjoint(CommonArgs),
}

fn required_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let path = args.config.as_ref().ok_or_else(|| invalid("--config", "missing"))?;
    let mut cfg = read_config(path)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_path(args: &CommonArgs, cfg: &RunConfig) -> Option<PathBuf> {
    args.out.clone().or_else(|| cfg.out.as_ref().map(PathBuf::from))
}

/// Writes to `path` or stdout; summaries go to whichever stream the data does not use.
fn with_output<T>(
    path: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> Result<T, CliError>,
) -> Result<(T, Box<dyn Write>), CliError> {
    match path {
        Some(p) => {
            let file = fs::File::create(p).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))?;
            let mut w = io::BufWriter::new(file);
            let r = f(&mut w);
            w.flush().map_err(io_err)?;
            Ok((r?, Box::new(io::stdout())))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            let r = f(&mut lock)?;
            lock.flush().map_err(io_err)?;
            Ok((r, Box::new(io::stderr())))
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = required_config(&args)?;
            let path = out_path(&args, &cfg);
            let (s, mut info) = with_output(path.as_deref(), |w| simulate(&cfg, w))?;
            if !args.quiet {
                writeln!(
                    info,
                    "{}: {} steps, max constraint residual {:.3e}, max energy deviation {:.3e}",
                    s.integrator, s.steps, s.max_constraint_residual, s.energy_drift
                )
                .map_err(io_err)?;
            }
            Ok(())
        }
        Command::Sweep(args) => {
            let cfg = required_config(&args)?;
            let report = sweep(&cfg)?;
            let path = out_path(&args, &cfg);
            let (_, mut info) = with_output(path.as_deref(), |w| write_sweep(&report, w).map_err(io_err))?;
            if !args.quiet {
                writeln!(
                    info,
                    "slopes: position {}, velocity {}, energy {}",
                    slope_text(&report.slope_pos),
                    slope_text(&report.slope_vel),
                    slope_text(&report.slope_energy)
                )
                .map_err(io_err)?;
            }
            Ok(())
        }
        Command::Check(args) => {
            let cfg = match &args.config {
                Some(_) => Some(required_config(&args)?),
                None => None,
            };
            let suite = match &args.suite {
                Some(s) => Suite::parse(s).ok_or_else(|| invalid("--suite", format!("unknown suite {s}")))?,
                None => cfg.as_ref().and_then(|c| c.suite).unwrap_or(Suite::All),
            };
            let seed = args.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let results = checks::run_suite(suite, seed);
            let failed = results.iter().filter(|r| !r.passed()).count();
            let mut out = io::stdout().lock();
            for r in &results {
                if !args.quiet || !r.passed() {
                    writeln!(out, "{}", format_check(r)).map_err(io_err)?;
                }
            }
            if failed > 0 {
                return Err(CliError::Failed(format!("{failed} of {} checks failed", results.len())));
            }
            Ok(())
        }
        Command::Adjoint(args) => {
            let cfg = required_config(&args)?;
            let defects = adjoint(&cfg, cfg.seed)?;
            let mut out = io::stdout().lock();
            let mut failed = 0;
            for (name, d) in &defects {
                let ok = *d <= ADJOINT_TOL;
                failed += usize::from(!ok);
                if !args.quiet || !ok {
                    writeln!(out, "{} {name} defect={d:.3e} tol={ADJOINT_TOL:.0e}", if ok { "PASS" } else { "FAIL" })
                        .map_err(io_err)?;
                }
            }
            if failed > 0 {
                return Err(CliError::Failed(format!("{failed} adjoint pairs above tolerance")));
            }
            Ok(())
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gni: {e}");
            e.exit_code()
        }
    }
}
