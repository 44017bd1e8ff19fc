//! Running integrators, convergence sweeps and invariant checks.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gni_flat::{FlatInitial, Scheme};
use crate::model::{self, FlatSystem, PhaseState};
use crate::numerics::{lu_solve, Vector};

pub mod checks;

/// Errors at or below this are treated as exact.
pub const NOISE_FLOOR: f64 = 1e-14;

/// Quantities compared between runs at a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub position: Vector,
    /// Velocity for flat systems, angular or fiber velocity for reduced ones.
    pub velocity: Vector,
    pub energy: f64,
    pub constraint_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub energy: f64,
    pub constraint_residual: f64,
    pub newton_iters: usize,
}

/// A stepper bound to its system.
pub trait Integrator: Send + Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;
    type Initial: Sync + ?Sized;

    fn name(&self) -> &str;
    /// Scheme state for step size `h` from physical initial data.
    fn initialize(&self, init: &Self::Initial, h: f64) -> Result<Self::State>;
    /// Advances one step; also returns the Newton iteration count.
    fn step(&self, s: &Self::State, h: f64) -> Result<(Self::State, usize)>;
    fn observe(&self, s: &Self::State, h: f64) -> Observation;
    fn component_names(&self) -> Vec<String>;
    fn components(&self, s: &Self::State, h: f64) -> Vec<f64>;
}

/// States at `t_k = k h` with per-node diagnostics. A failed run keeps
/// the states computed before the failure.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub diagnostics: Vec<Diagnostics>,
    pub failure: Option<Error>,
}

impl<S> Trajectory<S> {
    pub fn new(h: f64) -> Self {
        Self { h, times: Vec::new(), states: Vec::new(), diagnostics: Vec::new(), failure: None }
    }

    pub fn push(&mut self, s: S, d: Diagnostics) {
        self.times.push(self.states.len() as f64 * self.h);
        self.states.push(s);
        self.diagnostics.push(d);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn max_constraint_residual(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.constraint_residual).fold(0.0, f64::max)
    }

    pub fn into_result(self) -> Result<Self> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

fn diagnostics(obs: &Observation, iters: usize) -> Diagnostics {
    Diagnostics { energy: obs.energy, constraint_residual: obs.constraint_residual, newton_iters: iters }
}

/// `n` steps from an already prepared state.
pub fn run_from<I: Integrator>(integ: &I, s0: I::State, h: f64, n: usize) -> Trajectory<I::State> {
    let mut traj = Trajectory::new(h);
    let obs = integ.observe(&s0, h);
    traj.push(s0, diagnostics(&obs, 0));
    for k in 0..n {
        let cur = traj.states.last().expect("non-empty");
        match integ.step(cur, h) {
            Ok((next, iters)) => {
                let obs = integ.observe(&next, h);
                traj.push(next, diagnostics(&obs, iters));
            }
            Err(e) => {
                traj.failure = Some(Error::StepFailed { step: k + 1, source: Box::new(e) });
                break;
            }
        }
    }
    traj
}

/// `n` steps from physical initial data.
pub fn run<I: Integrator>(integ: &I, init: &I::Initial, h: f64, n: usize) -> Result<Trajectory<I::State>> {
    let s0 = integ.initialize(init, h)?;
    Ok(run_from(integ, s0, h, n))
}

/// Observation at `t = n h` without storing the trajectory.
pub fn final_observation<I: Integrator>(integ: &I, init: &I::Initial, h: f64, n: usize) -> Result<Observation> {
    let mut s = integ.initialize(init, h)?;
    for k in 0..n {
        s = integ
            .step(&s, h)
            .map_err(|e| Error::StepFailed { step: k + 1, source: Box::new(e) })?
            .0;
    }
    Ok(integ.observe(&s, h))
}

/// Number of steps of size `h` spanning `t_end`.
pub fn steps_for(t_end: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidArgument("need h > 0 and T > 0".into()));
    }
    let n = (t_end / h).round();
    if (n * h - t_end).abs() > 1e-9 * t_end {
        return Err(Error::InvalidArgument(format!("h = {h} does not divide T = {t_end}")));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
}

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn slope_fit(h: &[f64], err: &[f64]) -> Result<SlopeFit> {
    if h.len() != err.len() || h.len() < 3 {
        return Err(Error::InvalidArgument("slope fit needs at least three points".into()));
    }
    if err.iter().any(|&e| !(e > NOISE_FLOOR)) {
        return Err(Error::BelowNoiseFloor);
    }
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let ss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    Ok(SlopeFit { slope, residual: (ss / n).sqrt() })
}

/// Where the reference solution of a sweep comes from.
#[derive(Debug, Clone)]
pub enum ReferenceSpec {
    /// The same scheme with a finer step.
    SameScheme { h_ref: f64 },
    /// A precomputed observation at the final time.
    Given(Observation),
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub h: Vec<f64>,
    pub err_pos: Vec<f64>,
    pub err_vel: Vec<f64>,
    pub err_energy: Vec<f64>,
    /// `None` when the errors sit below the noise floor.
    pub slope_pos: Option<SlopeFit>,
    pub slope_vel: Option<SlopeFit>,
    pub slope_energy: Option<SlopeFit>,
    pub reference_h: Option<f64>,
}

fn fit_or_flag(h: &[f64], err: &[f64]) -> Result<Option<SlopeFit>> {
    match slope_fit(h, err) {
        Ok(f) => Ok(Some(f)),
        Err(Error::BelowNoiseFloor) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Final-time errors for each `h` against a reference, with slopes.
/// Entries run in parallel; the report is ordered as `h_list`.
pub fn convergence_sweep<I: Integrator>(
    integ: &I,
    init: &I::Initial,
    t_end: f64,
    h_list: &[f64],
    reference_spec: &ReferenceSpec,
) -> Result<ConvergenceReport> {
    if h_list.len() < 3 {
        return Err(Error::InvalidArgument("a sweep needs at least three step sizes".into()));
    }
    if h_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("step sizes must be strictly decreasing".into()));
    }
    let h_min = *h_list.last().expect("non-empty");
    let steps: Vec<usize> = h_list.iter().map(|&h| steps_for(t_end, h)).collect::<Result<_>>()?;

    let job = |h: f64, n: usize| final_observation(integ, init, h, n);
    let (reference, rest): (Result<Observation>, Vec<Result<Observation>>) = match reference_spec {
        ReferenceSpec::SameScheme { h_ref } => {
            if !(*h_ref > 0.0) || *h_ref > h_min / 30.0 * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "reference step {h_ref} must not exceed min(h)/30 = {}",
                    h_min / 30.0
                )));
            }
            let n_ref = steps_for(t_end, *h_ref)?;
            rayon::join(
                || job(*h_ref, n_ref),
                || h_list.par_iter().zip(steps.par_iter()).map(|(&h, &n)| job(h, n)).collect(),
            )
        }
        ReferenceSpec::Given(obs) => (
            Ok(obs.clone()),
            h_list.par_iter().zip(steps.par_iter()).map(|(&h, &n)| job(h, n)).collect(),
        ),
    };
    let reference = reference?;
    let mut err_pos = Vec::new();
    let mut err_vel = Vec::new();
    let mut err_energy = Vec::new();
    for obs in rest {
        let obs = obs?;
        err_pos.push((&obs.position - &reference.position).amax());
        err_vel.push((&obs.velocity - &reference.velocity).amax());
        err_energy.push((obs.energy - reference.energy).abs());
    }
    Ok(ConvergenceReport {
        slope_pos: fit_or_flag(h_list, &err_pos)?,
        slope_vel: fit_or_flag(h_list, &err_vel)?,
        slope_energy: fit_or_flag(h_list, &err_energy)?,
        h: h_list.to_vec(),
        err_pos,
        err_vel,
        err_energy,
        reference_h: match reference_spec {
            ReferenceSpec::SameScheme { h_ref } => Some(*h_ref),
            ReferenceSpec::Given(_) => None,
        },
    })
}

/// `max_s |step_b(step_a(s, h), -h) - s|_inf`.
pub fn adjoint_check<FA, FB>(step_a: FA, step_b: FB, states: &[PhaseState], h: f64) -> Result<f64>
where
    FA: Fn(&PhaseState, f64) -> Result<PhaseState>,
    FB: Fn(&PhaseState, f64) -> Result<PhaseState>,
{
    let mut worst = 0.0f64;
    for s in states {
        let back = step_b(&step_a(s, h)?, -h)?;
        worst = worst.max(back.distance(s));
    }
    Ok(worst)
}

/// Random states admissible for `scheme` at step `h`: `q` uniform in
/// `[-half_width, half_width]^n`, momentum Gaussian then projected onto the
/// scheme's constraint, multipliers Gaussian.
pub fn sample_admissible<R: Rng>(
    sys: &FlatSystem,
    scheme: Scheme,
    count: usize,
    half_width: f64,
    h: f64,
    rng: &mut R,
) -> Result<Vec<PhaseState>> {
    let n = sys.n();
    let m = sys.m();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let q = Vector::from_fn(n, |_, _| rng.gen_range(-half_width..=half_width));
        let mut p = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lambda = Vector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        if m > 0 {
            let mu = sys.constraints(&q);
            let shifted = &p + sys.grad_potential(&q) * (scheme.shift() * 0.5 * h) - sys.pi(&q);
            let c = lu_solve(&sys.constraint_gram(&q), &(&mu * (sys.mass_inv() * shifted)))
                .map_err(|_| Error::RankDeficient)?;
            p -= mu.transpose() * c;
        }
        out.push(PhaseState::new(q, p, lambda));
    }
    Ok(out)
}

/// Final-time observation of the RK4 reference for a flat system.
pub fn rk4_reference(sys: &FlatSystem, init: &FlatInitial, t_end: f64, h_ref: f64) -> Result<Observation> {
    let s0 = PhaseState::new(init.q.clone(), init.p.clone(), Vector::zeros(sys.m()));
    let traj = model::reference_solve(sys, &s0, t_end, h_ref)?;
    let last = traj.states.last().expect("initial state");
    let r = model::constraint_residual(sys, &last.q, &last.p);
    Ok(Observation {
        position: last.q.clone(),
        velocity: sys.mass_inv() * &last.p,
        energy: model::energy(sys, &last.q, &last.p),
        constraint_residual: if r.is_empty() { 0.0 } else { r.amax() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gni_flat::{euler_a_step, FlatStepper};
    use crate::model::systems;
    use nalgebra::dvector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

    #[test]
    fn slope_of_power_laws() {
        let e1: Vec<f64> = H.iter().map(|h| 3.0 * h).collect();
        let e2: Vec<f64> = H.iter().map(|h| 0.7 * h * h).collect();
        assert!((slope_fit(&H, &e1).unwrap().slope - 1.0).abs() < 1e-12);
        let fit = slope_fit(&H, &e2).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn leading_term_dominates() {
        let h = [1e-3, 5e-4, 2.5e-4, 1.25e-4];
        let e: Vec<f64> = h.iter().map(|h| h + 10.0 * h * h).collect();
        let s = slope_fit(&h, &e).unwrap().slope;
        assert!(s > 1.0 && s < 1.1, "{s}");
    }

    #[test]
    fn slope_fit_preconditions() {
        assert_eq!(slope_fit(&H, &[1e-3, 1e-4, 1e-15, 1e-6]), Err(Error::BelowNoiseFloor));
        assert!(matches!(slope_fit(&H[..2], &[1e-3, 1e-4]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_steps_keeps_initial_state() {
        let sys = systems::nonholonomic_particle(true, 0.0);
        let integ = FlatStepper::new(sys, Scheme::Rattle);
        let init = FlatInitial { q: dvector![1.0, 0.0, 0.0], p: dvector![0.3, 1.0, 0.0] };
        let traj = run(&integ, &init, 0.1, 0).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.times, vec![0.0]);
        assert!(traj.failure.is_none());
    }

    #[test]
    fn free_particle_is_below_noise_floor() {
        let integ = FlatStepper::new(systems::free_particle(2), Scheme::EulerA);
        let init = FlatInitial { q: dvector![0.0, 1.0], p: dvector![0.5, -0.25] };
        let h = [0.125, 0.0625, 0.03125];
        let report =
            convergence_sweep(&integ, &init, 1.0, &h, &ReferenceSpec::SameScheme { h_ref: h[2] / 32.0 }).unwrap();
        assert!(report.err_pos.iter().all(|&e| e <= NOISE_FLOOR));
        assert!(report.slope_pos.is_none() && report.slope_vel.is_none());
    }

    #[test]
    fn sweep_preconditions() {
        let integ = FlatStepper::new(systems::free_particle(1), Scheme::Rattle);
        let init = FlatInitial { q: dvector![0.0], p: dvector![1.0] };
        let coarse_ref = ReferenceSpec::SameScheme { h_ref: 0.01 };
        assert!(convergence_sweep(&integ, &init, 1.0, &[0.1, 0.05, 0.025], &coarse_ref).is_err());
        let fine_ref = ReferenceSpec::SameScheme { h_ref: 1e-4 };
        assert!(convergence_sweep(&integ, &init, 1.0, &[0.1, 0.05, 0.1], &fine_ref).is_err());
        assert!(convergence_sweep(&integ, &init, 1.0, &[0.1, 0.05], &fine_ref).is_err());
        assert!(steps_for(1.0, 0.3).is_err());
    }

    #[test]
    fn identity_steps_have_no_defect() {
        let sys = systems::nonholonomic_particle(false, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let states = sample_admissible(&sys, Scheme::Rattle, 10, 1.0, 0.1, &mut rng).unwrap();
        let id = |s: &PhaseState, _h: f64| Ok(s.clone());
        assert_eq!(adjoint_check(id, id, &states, 0.1).unwrap(), 0.0);
        let zero = |s: &PhaseState, _h: f64| euler_a_step(&sys, s, 0.0);
        assert_eq!(adjoint_check(zero, zero, &states, 0.1).unwrap(), 0.0);
    }

    struct Counter;

    impl Integrator for Counter {
        type State = usize;
        type Initial = usize;

        fn name(&self) -> &str {
            "counter"
        }
        fn initialize(&self, init: &usize, _h: f64) -> Result<usize> {
            Ok(*init)
        }
        fn step(&self, s: &usize, _h: f64) -> Result<(usize, usize)> {
            if *s == 2 {
                Err(Error::NoConvergence { iterations: 50, residual: 1.0 })
            } else {
                Ok((s + 1, 1))
            }
        }
        fn observe(&self, s: &usize, _h: f64) -> Observation {
            Observation { position: dvector![*s as f64], velocity: dvector![0.0], energy: 0.0, constraint_residual: 0.0 }
        }
        fn component_names(&self) -> Vec<String> {
            vec!["n".into()]
        }
        fn components(&self, s: &usize, _h: f64) -> Vec<f64> {
            vec![*s as f64]
        }
    }

    #[test]
    fn failures_keep_partial_trajectory() {
        let traj = run(&Counter, &0, 0.5, 10).unwrap();
        assert_eq!(traj.states, vec![0, 1, 2]);
        assert_eq!(traj.times, vec![0.0, 0.5, 1.0]);
        let err = traj.into_result().unwrap_err();
        assert!(matches!(err, Error::StepFailed { step: 3, .. }));
        assert!(matches!(err.root(), Error::NoConvergence { .. }));
    }
}
