//! Seeded invariant suites behind `gni check`.

use nalgebra::dvector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{adjoint_check, run, sample_admissible, Integrator};
use crate::error::Result;
use crate::gni_flat::{
    euler_a_step, euler_b_step, physical_momentum, prepare_state, rattle_step, FlatInitial, FlatStepper, GniGeneric,
    Quadrature, Scheme,
};
use crate::gni_reduced::{reconstruct, ChaplyginGni, ChaplyginParams, ReducedInitial, ReducedRattle};
use crate::lie_so3::{
    cay, dcay, dcay_inv, dexp, dexp_inv_exact, exp_so3, Ad, Ad_star, AlgebraVec, GroupElem, Mat3, Retraction,
};
use crate::model::{self, systems, FlatSystem, PhaseState};
use crate::numerics::{Mat, NewtonConfig, Vector};

/// Samples per randomized invariant.
pub const SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Lie,
    Projectors,
    Steppers,
    Adjoint,
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lie" => Some(Self::Lie),
            "projectors" => Some(Self::Projectors),
            "steppers" => Some(Self::Steppers),
            "adjoint" => Some(Self::Adjoint),
            "all" => Some(Self::All),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.value <= self.tol
    }
}

fn record(out: &mut Vec<CheckResult>, suite: &'static str, name: impl Into<String>, value: f64, tol: f64) {
    out.push(CheckResult { suite, name: name.into(), value, tol });
}

/// Runs the selected suites with a seeded generator.
pub fn run_suite(suite: Suite, seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Lie | Suite::All) {
        lie_suite(seed, &mut out);
    }
    if matches!(suite, Suite::Projectors | Suite::All) {
        projector_suite(seed, &mut out);
    }
    if matches!(suite, Suite::Steppers | Suite::All) {
        stepper_suite(&mut out);
    }
    if matches!(suite, Suite::Adjoint | Suite::All) {
        adjoint_suite(seed, &mut out);
    }
    out
}

fn gaussian3<R: Rng>(rng: &mut R) -> AlgebraVec {
    AlgebraVec::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Uniform in the ball of the given radius.
pub fn sample_ball<R: Rng>(rng: &mut R, radius: f64) -> AlgebraVec {
    let d = gaussian3(rng).normalize();
    d * radius * rng.gen::<f64>().cbrt()
}

/// Right-trivialized tangent of `tau` at `xi` applied to `eta`, by a
/// fourth-order central difference with step `eps`.
pub fn fd_right_tangent(tau: &dyn Retraction, xi: &AlgebraVec, eta: &AlgebraVec, eps: f64) -> AlgebraVec {
    let f = |t: f64| *tau.tau(&(xi + eta * t)).matrix();
    let d = (f(-2.0 * eps) - f(eps * 2.0) + (f(eps) - f(-eps)) * 8.0) / (12.0 * eps);
    let a = d * tau.tau(xi).matrix().transpose();
    let s = (a - a.transpose()) * 0.5;
    AlgebraVec::new(s[(2, 1)], s[(0, 2)], s[(1, 0)])
}

fn lie_suite(seed: u64, out: &mut Vec<CheckResult>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = Mat3::identity();
    let (cayley, expo) = (crate::lie_so3::Cayley, crate::lie_so3::Exponential);
    let mut worst = [0.0f64; 11];
    for _ in 0..SAMPLES {
        let xi = sample_ball(&mut rng, 2.0);
        let eta = gaussian3(&mut rng);
        let m = gaussian3(&mut rng);
        worst[0] = worst[0].max(((cay(&xi) * cay(&-xi)).matrix() - id).amax());
        worst[1] = worst[1].max(((exp_so3(&xi) * exp_so3(&-xi)).matrix() - id).amax());
        let lhs = dcay(&xi) * eta;
        let rhs = Ad(&cay(&xi), &(dcay(&-xi) * eta));
        worst[2] = worst[2].max((lhs - rhs).amax());
        let lhs = fd_right_tangent(&expo, &xi, &eta, 1e-3);
        let rhs = Ad(&exp_so3(&xi), &fd_right_tangent(&expo, &-xi, &eta, 1e-3));
        worst[3] = worst[3].max((lhs - rhs).amax());
        let lhs = dcay_inv(&xi) * eta;
        let rhs = dcay_inv(&-xi) * Ad(&cay(&-xi), &eta);
        worst[4] = worst[4].max((lhs - rhs).amax());
        let lhs = dexp_inv_exact(&xi) * eta;
        let rhs = dexp_inv_exact(&-xi) * Ad(&exp_so3(&-xi), &eta);
        worst[5] = worst[5].max((lhs - rhs).amax());
        worst[6] = worst[6].max((dcay(&xi) * dcay_inv(&xi) - id).amax());
        let fd = fd_central_tangent(&cayley, &xi, &eta, 1e-6);
        worst[7] = worst[7].max((fd - dcay(&xi) * eta).amax());
        worst[8] = worst[8].max((fd_right_tangent(&expo, &xi, &eta, 1e-3) - dexp(&xi) * eta).amax());
        let g = exp_so3(&sample_ball(&mut rng, 3.0));
        worst[9] = worst[9].max((Ad_star(&g, &m).dot(&eta) - m.dot(&Ad(&g, &eta))).abs());
        worst[10] = worst[10].max(cay(&xi).defect());
    }
    let names = [
        ("cay_retraction", 1e-12),
        ("exp_retraction", 1e-12),
        ("cay_tangent_identity", 1e-10),
        ("exp_tangent_identity", 1e-10),
        ("cay_inverse_tangent_identity", 1e-10),
        ("exp_inverse_tangent_identity", 1e-10),
        ("dcay_times_inverse", 1e-12),
        ("dcay_finite_difference", 1e-6),
        ("dexp_finite_difference", 1e-10),
        ("ad_star_pairing", 1e-12),
        ("cay_in_group", 1e-12),
    ];
    for ((name, tol), v) in names.iter().zip(worst) {
        record(out, "lie", *name, v, *tol);
    }
}

/// Second-order central difference version of [`fd_right_tangent`].
pub fn fd_central_tangent(tau: &dyn Retraction, xi: &AlgebraVec, eta: &AlgebraVec, eps: f64) -> AlgebraVec {
    let d = (tau.tau(&(xi + eta * eps)).matrix() - tau.tau(&(xi - eta * eps)).matrix()) / (2.0 * eps);
    let a = d * tau.tau(xi).matrix().transpose();
    let s = (a - a.transpose()) * 0.5;
    AlgebraVec::new(s[(2, 1)], s[(0, 2)], s[(1, 0)])
}

/// Worst violation of `P^2=P, Q^2=Q, PQ=0, P+Q=I, mu P=0, P^T G Q=0`.
pub fn projector_defects(p: &Mat, q: &Mat, rows: &Mat, metric: &Mat) -> [f64; 6] {
    let dim = p.nrows();
    let id = Mat::identity(dim, dim);
    let mu_p = if rows.nrows() == 0 { 0.0 } else { (rows * p).amax() };
    [
        (p * p - p).amax(),
        (q * q - q).amax(),
        (p * q).amax(),
        (p + q - id).amax(),
        mu_p,
        (p.transpose() * metric * q).amax(),
    ]
}

const PROJECTOR_NAMES: [&str; 6] = ["p_idempotent", "q_idempotent", "pq_zero", "p_plus_q", "mu_p_zero", "g_orthogonal"];

/// The built-in flat systems with the parameter variants exercised by the
/// suites, each with a consistent initial state.
pub fn flat_cases() -> Vec<(String, FlatSystem, FlatInitial)> {
    // y = 0 makes the constraint read zdot = 0 whatever the drift
    let particle = |v: bool, a: f64| {
        (systems::nonholonomic_particle(v, a), FlatInitial { q: dvector![1.0, 0.0, 0.0], p: dvector![0.3, 1.0, 0.0] })
    };
    let planar = |a: f64| {
        let sys = systems::constrained_2d(a);
        // v1 + v2 = Y1 + Y2 = a at q = (1, 0)
        let init = FlatInitial { q: dvector![1.0, 0.0], p: sys.mass() * dvector![0.5 - a, -0.5] };
        (sys, init)
    };
    let mut cases = Vec::new();
    let (s, i) = particle(false, 0.0);
    cases.push(("nonholonomic_particle".to_string(), s, i));
    let (s, i) = particle(true, 0.0);
    cases.push(("nonholonomic_particle_harmonic".to_string(), s, i));
    let (s, i) = particle(true, 0.3);
    cases.push(("nonholonomic_particle_affine".to_string(), s, i));
    let (s, i) = planar(0.0);
    cases.push(("constrained_2d".to_string(), s, i));
    let (s, i) = planar(0.5);
    cases.push(("constrained_2d_affine".to_string(), s, i));
    cases
}

fn turntable_ball() -> (ChaplyginParams, ReducedInitial) {
    (
        ChaplyginParams::homogeneous(1.0, 1.0, 1.0, 2.0 / 3.0),
        ReducedInitial { x: dvector![1.0, 1.0], x_dot: Some(dvector![1.0, 1.0]), omega: AlgebraVec::new(0.0, 2.0, 0.0) },
    )
}

fn projector_suite(seed: u64, out: &mut Vec<CheckResult>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for (name, sys, _) in flat_cases() {
        let mut worst = [0.0f64; 6];
        for _ in 0..SAMPLES {
            let q = Vector::from_fn(sys.n(), |_, _| rng.gen_range(-2.0..=2.0));
            match model::projectors(&sys, &q) {
                Ok((p, qm)) => {
                    let d = projector_defects(&p, &qm, &sys.constraints(&q), sys.mass());
                    for (w, v) in worst.iter_mut().zip(d) {
                        *w = w.max(v);
                    }
                }
                Err(_) => worst = [f64::INFINITY; 6],
            }
        }
        for (pn, v) in PROJECTOR_NAMES.iter().zip(worst) {
            record(out, "projectors", format!("{name}/{pn}"), v, 1e-12);
        }
    }
    let uneven = ChaplyginParams { mass: 3.0, radius: 1.0, table_rate: 0.2, inertia: [1.0, 1.1, 1.2] };
    for (name, params) in [("chaplygin", turntable_ball().0), ("chaplygin_general", uneven)] {
        let rs = params.reduced_system();
        let mut worst = [0.0f64; 6];
        for _ in 0..SAMPLES {
            let x = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..=2.0));
            let (p, qm) = model::reduced_projectors(&rs, &x).expect("full rank");
            let d = projector_defects(&p, &qm, &rs.annihilator(&x), rs.metric());
            for (w, v) in worst.iter_mut().zip(d) {
                *w = w.max(v);
            }
        }
        for (pn, v) in PROJECTOR_NAMES.iter().zip(worst) {
            record(out, "projectors", format!("{name}/{pn}"), v, 1e-12);
        }
    }
    // hand-evaluated entries for m = r = 1, I = 2/3
    let rs = ChaplyginParams::homogeneous(1.0, 1.0, 0.0, 2.0 / 3.0).reduced_system();
    let (p, q) = model::reduced_projectors(&rs, &dvector![0.0, 0.0]).expect("full rank");
    record(out, "projectors", "chaplygin/q11_entry", (q[(0, 0)] - 0.4).abs(), 1e-12);
    record(out, "projectors", "chaplygin/q14_entry", (q[(0, 3)] + 0.4).abs(), 1e-12);
    record(out, "projectors", "chaplygin/p55_entry", (p[(4, 4)] - 1.0).abs(), 1e-12);
}

fn max_residual<I: Integrator>(integ: &I, init: &I::Initial, h: f64, n: usize) -> f64 {
    match run(integ, init, h, n) {
        Ok(t) if t.failure.is_none() => t.max_constraint_residual(),
        _ => f64::INFINITY,
    }
}

/// Position sequences of the generic scheme and of its companion one-step
/// map; returns the largest gap.
pub fn generic_vs_one_step(sys: &FlatSystem, lag: Quadrature, init: &FlatInitial, h: f64, steps: usize) -> Result<f64> {
    let generic = GniGeneric { sys: sys.clone(), lagrangian: lag, newton: NewtonConfig::default() };
    let scheme = generic.companion();
    let mut s = prepare_state(sys, scheme, init, h)?;
    let mut g = generic.initialize(init, h)?;
    let mut worst = 0.0f64;
    for _ in 0..steps {
        worst = worst.max((&g.q_prev - &s.q).amax());
        s = crate::gni_flat::scheme_step(sys, scheme, &s, h)?;
        g = generic.step(&g, h)?.0;
    }
    Ok(worst)
}

/// Largest contact-point gap between reduced RATTLE and the specialized
/// sphere scheme.
pub fn reduced_vs_chaplygin(params: &ChaplyginParams, init: &ReducedInitial, h: f64, steps: usize) -> Result<f64> {
    let rr = ReducedRattle::new(params.reduced_system(), NewtonConfig::default());
    let cg = ChaplyginGni { params: *params, newton: NewtonConfig::default() };
    let a = run(&rr, init, h, steps)?.into_result()?;
    let b = run(&cg, init, h, steps)?.into_result()?;
    Ok(a.states.iter().zip(&b.states).map(|(r, c)| (r.x[0] - c.q.x).abs().max((r.x[1] - c.q.y).abs())).fold(0.0, f64::max))
}

fn stepper_suite(out: &mut Vec<CheckResult>) {
    let h = 0.05;
    for (name, sys, init) in flat_cases() {
        for scheme in [Scheme::EulerA, Scheme::EulerB, Scheme::Rattle, Scheme::ComposedAB] {
            let st = FlatStepper::new(sys.clone(), scheme);
            record(out, "steppers", format!("{name}/{}/constraint", scheme.name()), max_residual(&st, &init, h, 200), 1e-10);
        }
        for lag in [Quadrature::Verlet, Quadrature::EulerA, Quadrature::EulerB] {
            let g = GniGeneric { sys: sys.clone(), lagrangian: lag, newton: NewtonConfig::default() };
            record(
                out,
                "steppers",
                format!("{name}/gni_generic_{}/constraint", lag.name()),
                max_residual(&g, &init, h, 200),
                1e-10,
            );
            let gap = generic_vs_one_step(&sys, lag, &init, 0.01, 100).unwrap_or(f64::INFINITY);
            record(out, "steppers", format!("{name}/gni_generic_{}/equivalence", lag.name()), gap, 1e-10);
        }
    }
    let (params, init) = turntable_ball();
    let cg = ChaplyginGni { params, newton: NewtonConfig::default() };
    record(out, "steppers", "chaplygin/chaplygin_gni/constraint", max_residual(&cg, &init, 0.1, 1000), 1e-10);
    let rr = ReducedRattle::new(params.reduced_system(), NewtonConfig::default());
    record(out, "steppers", "chaplygin/reduced_rattle/constraint", max_residual(&rr, &init, 0.1, 1000), 1e-10);
    let h = 1e-3;
    let gap = reduced_vs_chaplygin(&params, &init, h, 10).unwrap_or(f64::INFINITY);
    record(out, "steppers", "chaplygin/reduced_vs_specialized", gap, 10.0 * h * h);

    // unconstrained degeneration against textbook recursions
    let osc = systems::harmonic_oscillator();
    let h = 0.1;
    let fi = FlatInitial { q: dvector![1.0], p: dvector![0.3] };
    let mut worst = 0.0f64;
    let (mut qa, mut pa, mut qb, mut pb, mut qv, mut pv) = (1.0, 0.3, 1.0, 0.3, 1.0, 0.3);
    let mut sa = prepare_state(&osc, Scheme::EulerA, &fi, h).expect("unconstrained");
    let mut sb = prepare_state(&osc, Scheme::EulerB, &fi, h).expect("unconstrained");
    let mut sv = prepare_state(&osc, Scheme::Rattle, &fi, h).expect("unconstrained");
    for _ in 0..100 {
        pa -= h * qa;
        qa += h * pa;
        qb += h * pb;
        pb -= h * qb;
        let ph = pv - 0.5 * h * qv;
        qv += h * ph;
        pv = ph - 0.5 * h * qv;
        sa = euler_a_step(&osc, &sa, h).expect("unconstrained");
        sb = euler_b_step(&osc, &sb, h).expect("unconstrained");
        sv = rattle_step(&osc, &sv, h).expect("unconstrained");
        let pa_s = physical_momentum(&osc, Scheme::EulerA, &sa, h)[0];
        let pb_s = physical_momentum(&osc, Scheme::EulerB, &sb, h)[0];
        for d in [sa.q[0] - qa, pa_s - pa, sb.q[0] - qb, pb_s - pb, sv.q[0] - qv, sv.p[0] - pv] {
            worst = worst.max(d.abs());
        }
    }
    record(out, "steppers", "unconstrained/symplectic_euler_and_verlet", worst, 1e-13);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xis: Vec<AlgebraVec> = (0..10_000).map(|_| sample_ball(&mut rng, 1.0)).collect();
    let ws = reconstruct(&GroupElem::identity(), &xis, 0.01);
    record(out, "steppers", "reconstruct/group_drift", ws.iter().map(|w| w.defect()).fold(0.0, f64::max), 1e-9);
}

/// Worst defect of `b(-h) o a(h)` over `count` admissible states.
pub fn flat_adjoint_defect(sys: &FlatSystem, a: Scheme, b: Scheme, count: usize, h: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<PhaseState> = sample_admissible(sys, a, count, 1.0, h, &mut rng)?;
    adjoint_check(
        |s, h| crate::gni_flat::scheme_step(sys, a, s, h),
        |s, h| crate::gni_flat::scheme_step(sys, b, s, h),
        &states,
        h,
    )
}

fn adjoint_suite(seed: u64, out: &mut Vec<CheckResult>) {
    for (name, sys, _) in flat_cases() {
        for (a, b) in [(Scheme::EulerA, Scheme::EulerB), (Scheme::EulerB, Scheme::EulerA), (Scheme::Rattle, Scheme::Rattle)] {
            let d = flat_adjoint_defect(&sys, a, b, 50, 0.1, seed).unwrap_or(f64::INFINITY);
            record(out, "adjoint", format!("{name}/{}_then_{}", a.name(), b.name()), d, 1e-9);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_for_a_few_seeds() {
        for seed in [0, 7] {
            for r in run_suite(Suite::All, seed) {
                assert!(r.passed(), "{}/{}: {:.3e} > {:.1e}", r.suite, r.name, r.value, r.tol);
            }
        }
    }

    #[test]
    fn suites_are_deterministic() {
        assert_eq!(run_suite(Suite::Lie, 3), run_suite(Suite::Lie, 3));
        assert_eq!(run_suite(Suite::Adjoint, 3), run_suite(Suite::Adjoint, 3));
    }
}
