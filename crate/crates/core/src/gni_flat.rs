//! Geometric nonholonomic steppers on a flat configuration space.
//!
//! The one-step maps act on `(q, p, lambda)` where `p` is the averaged
//! momentum of the scheme. For Euler A the physical momentum, the one that
//! satisfies `mu M^-1 (pbar - Pi) = 0`, is `pbar = p + h/2 V_q(q)`; for
//! Euler B it is `pbar = p - h/2 V_q(q)`; for RATTLE `pbar = p`.
//!
//! Each step is explicit in `q_{k+1}`, after which the multiplier solves one
//! linear system with matrix `(h/2) mu M^-1 mu^T`.

use crate::analysis::{Integrator, Observation};
use crate::error::{Error, Result};
use crate::model::{self, FlatSystem, PhaseState};
use crate::numerics::{lu_solve, newton_solve, NewtonConfig, Vector};

/// Momentum-level discrete Lagrangian: the two slot derivatives suffice.
pub trait DiscreteLagrangian: Send + Sync {
    fn d1(&self, sys: &FlatSystem, q0: &Vector, q1: &Vector, h: f64) -> Vector;
    fn d2(&self, sys: &FlatSystem, q0: &Vector, q1: &Vector, h: f64) -> Vector;
}

/// Quadrature rules for `L = v^T M v / 2 - V(q)` on one interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    /// `h L(q0, v)`
    EulerA,
    /// `h L(q1, v)`
    EulerB,
    /// `h/2 (L(q0, v) + L(q1, v))`
    Verlet,
}

impl Quadrature {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euler_a" => Some(Self::EulerA),
            "euler_b" => Some(Self::EulerB),
            "verlet" => Some(Self::Verlet),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::EulerA => "euler_a",
            Self::EulerB => "euler_b",
            Self::Verlet => "verlet",
        }
    }

    fn weights(&self) -> (f64, f64) {
        match self {
            Self::EulerA => (1.0, 0.0),
            Self::EulerB => (0.0, 1.0),
            Self::Verlet => (0.5, 0.5),
        }
    }
}

impl DiscreteLagrangian for Quadrature {
    fn d1(&self, sys: &FlatSystem, q0: &Vector, q1: &Vector, h: f64) -> Vector {
        let (w0, _) = self.weights();
        let mv = sys.mass() * ((q1 - q0) / h);
        let mut out = -mv;
        if w0 != 0.0 {
            out -= sys.grad_potential(q0) * (w0 * h);
        }
        out
    }

    fn d2(&self, sys: &FlatSystem, q0: &Vector, q1: &Vector, h: f64) -> Vector {
        let (_, w1) = self.weights();
        let mut out = sys.mass() * ((q1 - q0) / h);
        if w1 != 0.0 {
            out -= sys.grad_potential(q1) * (w1 * h);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GenericStep {
    pub q_next: Vector,
    pub iterations: usize,
    /// `mu M^-1 ((p- + p+)/2 - Pi)` at `q_curr`.
    pub node_residual: Vector,
}

/// Pre- and post-momenta `(-D1 L_d(q_curr, q_next), D2 L_d(q_prev, q_curr))`.
pub fn discrete_momenta<L: DiscreteLagrangian + ?Sized>(
    ld: &L,
    sys: &FlatSystem,
    q_prev: &Vector,
    q_curr: &Vector,
    q_next: &Vector,
    h: f64,
) -> (Vector, Vector) {
    (-ld.d1(sys, q_curr, q_next, h), ld.d2(sys, q_prev, q_curr, h))
}

/// Solves `D1 L_d(q_k, q_{k+1}) + (P^T - Q^T) D2 L_d(q_{k-1}, q_k) + 2 Q^T Pi(q_k) = 0`
/// for `q_{k+1}`, projectors taken at `q_k`.
pub fn gni_generic_step<L: DiscreteLagrangian + ?Sized>(
    ld: &L,
    sys: &FlatSystem,
    q_prev: &Vector,
    q_curr: &Vector,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<GenericStep> {
    let (p, q) = model::projectors(sys, q_curr)?;
    let d2 = ld.d2(sys, q_prev, q_curr, h);
    let mut fixed = (p.transpose() - q.transpose()) * d2;
    if sys.is_affine() {
        fixed += q.transpose() * sys.pi(q_curr) * 2.0;
    }
    let predictor = q_curr * 2.0 - q_prev;
    let sol = newton_solve(|x: &Vector| ld.d1(sys, q_curr, x, h) + &fixed, &predictor, cfg)?;
    let (pm, pp) = discrete_momenta(ld, sys, q_prev, q_curr, &sol.x, h);
    let node_residual = model::constraint_residual(sys, q_curr, &((pm + pp) * 0.5));
    Ok(GenericStep { q_next: sol.x, iterations: sol.iterations, node_residual })
}

/// Which one-step map to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    EulerA,
    EulerB,
    Rattle,
    /// Euler A then Euler B, each with `h/2`, on physical momenta.
    ComposedAB,
}

impl Scheme {
    /// Sign `s` in `pbar = p + s h/2 V_q(q)`.
    pub fn shift(&self) -> f64 {
        match self {
            Scheme::EulerA => 1.0,
            Scheme::EulerB => -1.0,
            Scheme::Rattle | Scheme::ComposedAB => 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::EulerA => "euler_a",
            Scheme::EulerB => "euler_b",
            Scheme::Rattle => "rattle",
            Scheme::ComposedAB => "euler_ab",
        }
    }
}

fn shifted_step(sys: &FlatSystem, shift: f64, s: &PhaseState, h: f64) -> Result<PhaseState> {
    if h == 0.0 {
        return Ok(s.clone());
    }
    let mut kick = sys.grad_potential(&s.q);
    if sys.m() > 0 {
        kick += sys.constraints(&s.q).transpose() * &s.lambda;
    }
    let p_half = &s.p - kick * (0.5 * h);
    let q1 = &s.q + sys.mass_inv() * &p_half * h;
    let g1 = sys.grad_potential(&q1);
    if sys.m() == 0 {
        let p1 = &p_half - &g1 * (0.5 * h);
        return Ok(PhaseState::new(q1, p1, Vector::zeros(0)));
    }
    let mu1 = sys.constraints(&q1);
    let gram = sys.constraint_gram(&q1) * (0.5 * h);
    let target = &p_half - &g1 * ((1.0 - shift) * 0.5 * h) - sys.pi(&q1);
    let rhs = &mu1 * (sys.mass_inv() * target);
    let lambda1 = lu_solve(&gram, &rhs).map_err(|e| match e {
        Error::SingularMatrix { .. } => Error::RankDeficient,
        e => e,
    })?;
    let p1 = &p_half - (&g1 + mu1.transpose() * &lambda1) * (0.5 * h);
    Ok(PhaseState::new(q1, p1, lambda1))
}

/// Euler A extension; the input satisfies `mu M^-1 (p + h/2 V_q - Pi) = 0`.
pub fn euler_a_step(sys: &FlatSystem, s: &PhaseState, h: f64) -> Result<PhaseState> {
    shifted_step(sys, 1.0, s, h)
}

/// Euler B extension; the input satisfies `mu M^-1 (p - h/2 V_q - Pi) = 0`.
pub fn euler_b_step(sys: &FlatSystem, s: &PhaseState, h: f64) -> Result<PhaseState> {
    shifted_step(sys, -1.0, s, h)
}

/// Nonholonomic RATTLE, linear or affine; the input satisfies
/// `mu M^-1 (p - Pi) = 0`.
pub fn rattle_step(sys: &FlatSystem, s: &PhaseState, h: f64) -> Result<PhaseState> {
    shifted_step(sys, 0.0, s, h)
}

/// Physical momentum from the scheme momentum.
pub fn physical_momentum(sys: &FlatSystem, scheme: Scheme, s: &PhaseState, h: f64) -> Vector {
    let shift = scheme.shift();
    if shift == 0.0 {
        return s.p.clone();
    }
    &s.p + sys.grad_potential(&s.q) * (shift * 0.5 * h)
}

/// Scheme momentum from the physical momentum.
pub fn scheme_momentum(sys: &FlatSystem, scheme: Scheme, q: &Vector, pbar: &Vector, h: f64) -> Vector {
    let shift = scheme.shift();
    if shift == 0.0 {
        return pbar.clone();
    }
    pbar - sys.grad_potential(q) * (shift * 0.5 * h)
}

/// Euler A with `h/2` followed by Euler B with `h/2`. States carry the
/// physical momentum.
pub fn composed_ab_step(sys: &FlatSystem, s: &PhaseState, h: f64) -> Result<PhaseState> {
    if h == 0.0 {
        return Ok(s.clone());
    }
    let hh = 0.5 * h;
    let a_in = PhaseState::new(s.q.clone(), scheme_momentum(sys, Scheme::EulerA, &s.q, &s.p, hh), s.lambda.clone());
    let a_out = euler_a_step(sys, &a_in, hh)?;
    let pbar = physical_momentum(sys, Scheme::EulerA, &a_out, hh);
    let b_in = PhaseState::new(a_out.q.clone(), scheme_momentum(sys, Scheme::EulerB, &a_out.q, &pbar, hh), a_out.lambda);
    let b_out = euler_b_step(sys, &b_in, hh)?;
    let pbar = physical_momentum(sys, Scheme::EulerB, &b_out, hh);
    Ok(PhaseState::new(b_out.q, pbar, b_out.lambda))
}

/// Dispatches on `scheme`.
pub fn scheme_step(sys: &FlatSystem, scheme: Scheme, s: &PhaseState, h: f64) -> Result<PhaseState> {
    match scheme {
        Scheme::EulerA => euler_a_step(sys, s, h),
        Scheme::EulerB => euler_b_step(sys, s, h),
        Scheme::Rattle => rattle_step(sys, s, h),
        Scheme::ComposedAB => composed_ab_step(sys, s, h),
    }
}

/// Physical initial data `(q0, pbar0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatInitial {
    pub q: Vector,
    pub p: Vector,
}

/// Builds the scheme state for step size `h`: checks the constraint on the
/// physical momentum, shifts it into scheme coordinates, and seeds the
/// multiplier with the continuous one.
pub fn prepare_state(sys: &FlatSystem, scheme: Scheme, init: &FlatInitial, h: f64) -> Result<PhaseState> {
    if init.q.len() != sys.n() || init.p.len() != sys.n() {
        return Err(Error::InvalidArgument(format!("initial state must have dimension {}", sys.n())));
    }
    model::check_consistent(sys, &init.q, &init.p)?;
    let lambda = model::continuous_multiplier(sys, &init.q, &init.p)?;
    let p = scheme_momentum(sys, scheme, &init.q, &init.p, h);
    Ok(PhaseState::new(init.q.clone(), p, lambda))
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

/// A one-step flat scheme bound to a system.
#[derive(Debug, Clone)]
pub struct FlatStepper {
    pub sys: FlatSystem,
    pub scheme: Scheme,
}

impl FlatStepper {
    pub fn new(sys: FlatSystem, scheme: Scheme) -> Self {
        Self { sys, scheme }
    }
}

impl Integrator for FlatStepper {
    type State = PhaseState;
    type Initial = FlatInitial;

    fn name(&self) -> &str {
        self.scheme.name()
    }

    fn initialize(&self, init: &FlatInitial, h: f64) -> Result<PhaseState> {
        prepare_state(&self.sys, self.scheme, init, h)
    }

    fn step(&self, s: &PhaseState, h: f64) -> Result<(PhaseState, usize)> {
        Ok((scheme_step(&self.sys, self.scheme, s, h)?, 0))
    }

    fn observe(&self, s: &PhaseState, h: f64) -> Observation {
        let pbar = physical_momentum(&self.sys, self.scheme, s, h);
        let r = model::constraint_residual(&self.sys, &s.q, &pbar);
        Observation {
            position: s.q.clone(),
            velocity: self.sys.mass_inv() * &pbar,
            energy: model::energy(&self.sys, &s.q, &pbar),
            constraint_residual: if r.is_empty() { 0.0 } else { r.amax() },
        }
    }

    fn component_names(&self) -> Vec<String> {
        let n = self.sys.n();
        names("q", n).chain(names("p", n)).chain(names("lambda", self.sys.m())).collect()
    }

    fn components(&self, s: &PhaseState, h: f64) -> Vec<f64> {
        let pbar = physical_momentum(&self.sys, self.scheme, s, h);
        s.q.iter().chain(pbar.iter()).chain(s.lambda.iter()).copied().collect()
    }
}

/// Three-point state of the generic projected scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct LeapfrogState {
    pub q_prev: Vector,
    pub q_curr: Vector,
    /// Constraint residual at `q_prev`, available once `q_curr` is known.
    pub node_residual: f64,
}

/// The generic projected scheme with a quadrature discrete Lagrangian.
#[derive(Debug, Clone)]
pub struct GniGeneric {
    pub sys: FlatSystem,
    pub lagrangian: Quadrature,
    pub newton: NewtonConfig,
}

impl GniGeneric {
    /// The one-step scheme whose positions the generic scheme reproduces.
    pub fn companion(&self) -> Scheme {
        match self.lagrangian {
            Quadrature::EulerA => Scheme::EulerA,
            Quadrature::EulerB => Scheme::EulerB,
            Quadrature::Verlet => Scheme::Rattle,
        }
    }
}

impl Integrator for GniGeneric {
    type State = LeapfrogState;
    type Initial = FlatInitial;

    fn name(&self) -> &str {
        "gni_generic"
    }

    /// The second point comes from one step of the companion one-step map.
    fn initialize(&self, init: &FlatInitial, h: f64) -> Result<LeapfrogState> {
        let scheme = self.companion();
        let s0 = prepare_state(&self.sys, scheme, init, h)?;
        let s1 = scheme_step(&self.sys, scheme, &s0, h)?;
        Ok(LeapfrogState { q_prev: s0.q, q_curr: s1.q, node_residual: 0.0 })
    }

    fn step(&self, s: &LeapfrogState, h: f64) -> Result<(LeapfrogState, usize)> {
        let out = gni_generic_step(&self.lagrangian, &self.sys, &s.q_prev, &s.q_curr, h, &self.newton)?;
        let res = if out.node_residual.is_empty() { 0.0 } else { out.node_residual.amax() };
        Ok((LeapfrogState { q_prev: s.q_curr.clone(), q_curr: out.q_next, node_residual: res }, out.iterations))
    }

    /// Reports the left node of the interval, with the interval velocity and
    /// the averaged-potential energy.
    fn observe(&self, s: &LeapfrogState, h: f64) -> Observation {
        let v = (&s.q_curr - &s.q_prev) / h;
        let kinetic = 0.5 * v.dot(&(self.sys.mass() * &v));
        let pot = 0.5 * (self.sys.potential(&s.q_prev) + self.sys.potential(&s.q_curr));
        Observation {
            position: s.q_prev.clone(),
            velocity: v,
            energy: kinetic + pot,
            constraint_residual: s.node_residual,
        }
    }

    fn component_names(&self) -> Vec<String> {
        names("q", self.sys.n()).collect()
    }

    fn components(&self, s: &LeapfrogState, _h: f64) -> Vec<f64> {
        s.q_prev.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::systems::*;
    use crate::numerics::Mat;
    use nalgebra::dvector;
    use std::sync::Arc;

    fn plane_with_y_constraint() -> FlatSystem {
        FlatSystem::new(
            "plane",
            Mat::identity(2, 2),
            1,
            Arc::new(|_: &Vector| Mat::from_row_slice(1, 2, &[0.0, 1.0])),
        )
        .unwrap()
    }

    #[test]
    fn euler_a_free_motion_along_allowed_axis() {
        let sys = plane_with_y_constraint();
        let s = PhaseState::new(dvector![0.0, 0.0], dvector![1.0, 0.0], dvector![0.0]);
        let out = euler_a_step(&sys, &s, 0.1).unwrap();
        assert!((&out.q - dvector![0.1, 0.0]).amax() < 1e-16);
        assert!((&out.p - dvector![1.0, 0.0]).amax() < 1e-16);
        assert!(out.lambda.amax() < 1e-16);
        let out_b = euler_b_step(&sys, &s, 0.1).unwrap();
        assert_eq!(out_b.q, out.q);
        assert_eq!(out_b.p, out.p);
    }

    #[test]
    fn zero_step_is_identity() {
        let sys = nonholonomic_particle(true, 0.0);
        let s = PhaseState::new(dvector![0.1, 0.2, 0.3], dvector![1.0, 0.5, 0.1], dvector![0.7]);
        for scheme in [Scheme::EulerA, Scheme::EulerB, Scheme::Rattle, Scheme::ComposedAB] {
            assert_eq!(scheme_step(&sys, scheme, &s, 0.0).unwrap(), s);
        }
    }

    #[test]
    fn unconstrained_matches_symplectic_euler_and_verlet() {
        let sys = harmonic_oscillator();
        let h = 0.1;
        let (q0, p0) = (1.0f64, 0.3f64);
        // textbook recursions on the physical momentum
        let (mut qa, mut pa) = (q0, p0);
        let (mut qb, mut pb) = (q0, p0);
        let (mut qv, mut pv) = (q0, p0);
        let init = FlatInitial { q: dvector![q0], p: dvector![p0] };
        let mut sa = prepare_state(&sys, Scheme::EulerA, &init, h).unwrap();
        let mut sb = prepare_state(&sys, Scheme::EulerB, &init, h).unwrap();
        let mut sv = prepare_state(&sys, Scheme::Rattle, &init, h).unwrap();
        for _ in 0..50 {
            pa -= h * qa;
            qa += h * pa;
            qb += h * pb;
            pb -= h * qb;
            let ph = pv - 0.5 * h * qv;
            qv += h * ph;
            pv = ph - 0.5 * h * qv;
            sa = euler_a_step(&sys, &sa, h).unwrap();
            sb = euler_b_step(&sys, &sb, h).unwrap();
            sv = rattle_step(&sys, &sv, h).unwrap();
            let pa_s = physical_momentum(&sys, Scheme::EulerA, &sa, h)[0];
            let pb_s = physical_momentum(&sys, Scheme::EulerB, &sb, h)[0];
            assert!((sa.q[0] - qa).abs() < 1e-14 && (pa_s - pa).abs() < 1e-14);
            assert!((sb.q[0] - qb).abs() < 1e-14 && (pb_s - pb).abs() < 1e-14);
            assert!((sv.q[0] - qv).abs() < 1e-14 && (sv.p[0] - pv).abs() < 1e-14);
        }
    }

    #[test]
    fn rattle_free_flight() {
        let sys = free_particle(2);
        let s = PhaseState::new(dvector![0.0, 1.0], dvector![0.5, -0.25], Vector::zeros(0));
        let out = rattle_step(&sys, &s, 0.2).unwrap();
        assert_eq!(out.p, s.p);
        assert!((out.q - dvector![0.1, 0.95]).amax() < 1e-16);
    }

    #[test]
    fn generic_free_flight() {
        let sys = free_particle(2);
        let out = gni_generic_step(
            &Quadrature::Verlet,
            &sys,
            &dvector![0.0, 0.0],
            &dvector![0.1, 0.3],
            0.1,
            &NewtonConfig::default(),
        )
        .unwrap();
        assert!((out.q_next - dvector![0.2, 0.6]).amax() < 1e-14);
    }

    #[test]
    fn rattle_replays_shake_recursion() {
        // q_{k+1} - 2q_k + q_{k-1} = -h^2 M^-1 (V_q + mu^T lambda_k), and the
        // central velocity satisfies the constraint at q_k.
        let sys = nonholonomic_particle(true, 0.0);
        let h = 0.01;
        let init = FlatInitial { q: dvector![1.0, 0.0, 0.0], p: dvector![0.3, 1.0, 0.0] };
        let mut states = vec![prepare_state(&sys, Scheme::Rattle, &init, h).unwrap()];
        for _ in 0..101 {
            let next = rattle_step(&sys, states.last().unwrap(), h).unwrap();
            states.push(next);
        }
        for k in 1..101 {
            let (qm, q, qp) = (&states[k - 1].q, &states[k].q, &states[k + 1].q);
            let force = sys.grad_potential(q) + sys.constraints(q).transpose() * &states[k].lambda;
            let accel = (qp - q * 2.0 + qm) + force * (h * h);
            assert!(accel.amax() < 1e-12, "step {k}: {}", accel.amax());
            let v = (qp - qm) / (2.0 * h);
            assert!((sys.constraints(q) * v).amax() < 1e-12);
        }
    }

    #[test]
    fn affine_rattle_keeps_affine_constraint() {
        let sys = constrained_2d(0.7);
        let q = dvector![0.3, -0.2];
        // v1 + v2 = Y1 + Y2 = -0.7 (0.3 - 0.2)
        let v = dvector![0.2, -0.07 - 0.2];
        let init = FlatInitial { q: q.clone(), p: sys.mass() * v };
        let stepper = FlatStepper::new(sys.clone(), Scheme::Rattle);
        let mut s = stepper.initialize(&init, 0.05).unwrap();
        for _ in 0..200 {
            s = stepper.step(&s, 0.05).unwrap().0;
            assert!(stepper.observe(&s, 0.05).constraint_residual < 1e-12);
        }
    }

    #[test]
    fn composed_reduces_to_verlet_without_constraints() {
        let sys = harmonic_oscillator();
        let s = PhaseState::new(dvector![1.0], dvector![0.2], Vector::zeros(0));
        let a = composed_ab_step(&sys, &s, 0.1).unwrap();
        let b = rattle_step(&sys, &s, 0.1).unwrap();
        assert!(a.distance(&b) < 1e-15);
    }

    #[test]
    fn inconsistent_initial_rejected() {
        let sys = nonholonomic_particle(false, 0.0);
        let init = FlatInitial { q: dvector![0.0, 1.0, 0.0], p: dvector![1.0, 0.0, 0.0] };
        assert!(matches!(
            prepare_state(&sys, Scheme::Rattle, &init, 0.1),
            Err(Error::InconsistentInitialState(_))
        ));
    }
}
