//! Reduced geometric nonholonomic integrators on `R^n x so(3)`.
//!
//! A state `(x, p, xi, M, lambda)` carries the node-averaged shape momentum
//! `p`, the algebra velocity `xi` of the interval starting at the node, the
//! algebra pre-momentum `M` and the node multipliers. The node-averaged
//! algebra momentum is `M + h/2 eta^T lambda`.

use std::fmt;
use std::sync::Arc;

use crate::analysis::{Integrator, Observation};
use crate::error::{Error, Result};
use crate::lie_so3::{cay, AlgebraVec, Ad_star, GroupElem, Retraction};
use crate::model::{self, join, ReducedState, ReducedSystem, ALGEBRA_DIM};
use crate::numerics::{lu_solve, newton_solve, Mat, NewtonConfig, Vector};

pub mod chaplygin;

pub use chaplygin::{chaplygin_init, chaplygin_step, ChaplyginGni, ChaplyginParams, ChaplyginState, ChaplyginStep};

/// `l_d(x0, x1, sigma)`, a discrete Lagrangian composed with a retraction.
pub trait RetractedDiscreteLagrangian: Send + Sync {
    fn d1(&self, x0: &Vector, x1: &Vector, sigma: &AlgebraVec, h: f64) -> Vector;
    fn d2(&self, x0: &Vector, x1: &Vector, sigma: &AlgebraVec, h: f64) -> Vector;
    fn d3(&self, x0: &Vector, x1: &Vector, sigma: &AlgebraVec, h: f64) -> AlgebraVec;
}

/// `h ( z^T G z / 2 ) - h/2 (V(x0) + V(x1))` with `z = ((x1-x0)/h, sigma/h)`.
#[derive(Clone)]
pub struct QuadraticLagrangian {
    rsys: ReducedSystem,
}

impl fmt::Debug for QuadraticLagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticLagrangian").field("system", &self.rsys.name()).finish()
    }
}

impl QuadraticLagrangian {
    pub fn new(rsys: ReducedSystem) -> Self {
        Self { rsys }
    }

    /// `G z` for the interval velocity.
    fn momentum(&self, x0: &Vector, x1: &Vector, sigma: &AlgebraVec, h: f64) -> Vector {
        let v = (x1 - x0) / h;
        self.rsys.metric() * join(&v, &(sigma / h))
    }
}

impl RetractedDiscreteLagrangian for QuadraticLagrangian {
    fn d1(&self, x0: &Vector, x1: &Vector, sigma: &AlgebraVec, h: f64) -> Vector {
        let n = self.rsys.n();
        let gz = self.momentum(x0, x1, sigma, h);
        -gz.rows(0, n).into_owned() - self.rsys.grad_potential(x0) * (0.5 * h)
    }

    fn d2(&self, x0: &Vector, x1: &Vector, sigma: &AlgebraVec, h: f64) -> Vector {
        let n = self.rsys.n();
        let gz = self.momentum(x0, x1, sigma, h);
        gz.rows(0, n).into_owned() - self.rsys.grad_potential(x1) * (0.5 * h)
    }

    fn d3(&self, x0: &Vector, x1: &Vector, sigma: &AlgebraVec, h: f64) -> AlgebraVec {
        let n = self.rsys.n();
        let gz = self.momentum(x0, x1, sigma, h);
        AlgebraVec::new(gz[n], gz[n + 1], gz[n + 2])
    }
}

/// Pre- and post-momenta on the fiber, shape part first.
pub fn reduced_legendre<L: RetractedDiscreteLagrangian + ?Sized>(
    ld: &L,
    retraction: &dyn Retraction,
    x0: &Vector,
    x1: &Vector,
    xi: &AlgebraVec,
    h: f64,
) -> (Vector, Vector) {
    let sigma = xi * h;
    let d3 = ld.d3(x0, x1, &sigma, h);
    let m_minus = retraction.dtau_inv(&sigma).transpose() * d3;
    let m_plus = retraction.dtau_inv(&-sigma).transpose() * d3;
    (join(&-ld.d1(x0, x1, &sigma, h), &m_minus), join(&ld.d2(x0, x1, &sigma, h), &m_plus))
}

fn split_annihilator(ann: &Mat, n: usize) -> (Mat, Mat) {
    (ann.columns(0, n).into_owned(), ann.columns(n, ALGEBRA_DIM).into_owned())
}

fn rank(e: Error) -> Error {
    match e {
        Error::SingularMatrix { .. } => Error::RankDeficient,
        e => e,
    }
}

/// Solves the node equations at `x1` for `(x2, xi)` given the shape
/// pre-momentum `pre` and the algebra pre-momentum `m_alg`.
#[allow(clippy::too_many_arguments)]
fn recover_xi<L: RetractedDiscreteLagrangian + ?Sized>(
    ld: &L,
    retraction: &dyn Retraction,
    x1: &Vector,
    pre: &Vector,
    m_alg: &AlgebraVec,
    x2_guess: &Vector,
    xi_guess: &AlgebraVec,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<(Vector, AlgebraVec, usize)> {
    let n = x1.len();
    let mut z0 = Vector::zeros(n + ALGEBRA_DIM);
    z0.rows_mut(0, n).copy_from(x2_guess);
    z0.rows_mut(n, ALGEBRA_DIM).copy_from(xi_guess);
    let residual = |z: &Vector| {
        let x2 = z.rows(0, n).into_owned();
        let sigma = AlgebraVec::new(z[n], z[n + 1], z[n + 2]) * h;
        let shape = -ld.d1(x1, &x2, &sigma, h) - pre;
        let alg = retraction.dtau_inv(&sigma).transpose() * ld.d3(x1, &x2, &sigma, h) - m_alg;
        join(&shape, &alg)
    };
    let sol = newton_solve(residual, &z0, cfg)?;
    let x2 = sol.x.rows(0, n).into_owned();
    let xi = AlgebraVec::new(sol.x[n], sol.x[n + 1], sol.x[n + 2]);
    Ok((x2, xi, sol.iterations))
}

/// Shape pre-momentum at a node: `p - h/2 mu^T lambda`.
fn shape_pre(rsys: &ReducedSystem, x: &Vector, p: &Vector, lambda: &Vector, h: f64) -> Vector {
    if rsys.m() == 0 {
        return p.clone();
    }
    let (mu, _) = split_annihilator(&rsys.annihilator(x), rsys.n());
    p - mu.transpose() * lambda * (0.5 * h)
}

/// Node-averaged algebra momentum `M + h/2 eta^T lambda`.
pub fn averaged_algebra_momentum(rsys: &ReducedSystem, s: &ReducedState, h: f64) -> AlgebraVec {
    if rsys.m() == 0 {
        return s.m_alg;
    }
    let (_, eta) = split_annihilator(&rsys.annihilator(&s.x), rsys.n());
    let corr = eta.transpose() * &s.lambda * (0.5 * h);
    s.m_alg + AlgebraVec::new(corr[0], corr[1], corr[2])
}

/// One step of the staged reduced RATTLE scheme.
///
/// Stage 1 moves the shape, stage 2 solves the linear momentum and
/// multiplier update at the new node, stage 3 recovers the next algebra
/// velocity. Returns the new state and the number of Newton iterations.
pub fn reduced_rattle_step<L: RetractedDiscreteLagrangian + ?Sized>(
    rsys: &ReducedSystem,
    ld: &L,
    retraction: &dyn Retraction,
    s: &ReducedState,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<(ReducedState, usize)> {
    if h == 0.0 {
        return Ok((s.clone(), 0));
    }
    let n = rsys.n();
    let m = rsys.m();
    let sigma = s.xi * h;

    // stage 1
    let pre = shape_pre(rsys, &s.x, &s.p, &s.lambda, h);
    let x_guess = explicit_shape_guess(rsys, &s.x, &pre, &s.xi, h);
    let stage1 = newton_solve(|x1: &Vector| -ld.d1(&s.x, x1, &sigma, h) - &pre, &x_guess, cfg)?;
    let x1 = stage1.x;

    // stage 2
    let post_shape = ld.d2(&s.x, &x1, &sigma, h);
    let post_alg = Ad_star(&retraction.tau(&sigma), &s.m_alg);
    let (p1, m1, lambda1) = if m == 0 {
        (post_shape, post_alg, Vector::zeros(0))
    } else {
        let ann = rsys.annihilator(&x1);
        let (mu, eta) = split_annihilator(&ann, n);
        let w = &ann * rsys.metric_inv();
        let (wx, wg) = split_annihilator(&w, n);
        let dim = n + ALGEBRA_DIM + m;
        let mut a = Mat::zeros(dim, dim);
        let mut b = Vector::zeros(dim);
        a.view_mut((0, 0), (n, n)).fill_with_identity();
        a.view_mut((0, n + ALGEBRA_DIM), (n, m)).copy_from(&(mu.transpose() * (0.5 * h)));
        b.rows_mut(0, n).copy_from(&post_shape);
        a.view_mut((n, n), (ALGEBRA_DIM, ALGEBRA_DIM)).fill_with_identity();
        a.view_mut((n, n + ALGEBRA_DIM), (ALGEBRA_DIM, m)).copy_from(&(eta.transpose() * h));
        b.rows_mut(n, ALGEBRA_DIM).copy_from(&post_alg);
        a.view_mut((n + ALGEBRA_DIM, 0), (m, n)).copy_from(&wx);
        a.view_mut((n + ALGEBRA_DIM, n), (m, ALGEBRA_DIM)).copy_from(&(&wg * 0.5));
        let post_alg_dyn = Vector::from_column_slice(post_alg.as_slice());
        let rhs_c = &w * rsys.pi(&x1) - &wg * post_alg_dyn * 0.5;
        b.rows_mut(n + ALGEBRA_DIM, m).copy_from(&rhs_c);
        let z = lu_solve(&a, &b).map_err(rank)?;
        (
            z.rows(0, n).into_owned(),
            AlgebraVec::new(z[n], z[n + 1], z[n + 2]),
            z.rows(n + ALGEBRA_DIM, m).into_owned(),
        )
    };

    // stage 3
    let pre1 = shape_pre(rsys, &x1, &p1, &lambda1, h);
    let x2_guess = &x1 * 2.0 - &s.x;
    let (_, xi1, it3) = recover_xi(ld, retraction, &x1, &pre1, &m1, &x2_guess, &s.xi, h, cfg)?;

    Ok((ReducedState { x: x1, p: p1, xi: xi1, m_alg: m1, lambda: lambda1 }, stage1.iterations + it3))
}

/// `x + h G_xx^-1 (pre - G_xg xi)`, exact for quadratic Lagrangians
/// without potential.
fn explicit_shape_guess(rsys: &ReducedSystem, x: &Vector, pre: &Vector, xi: &AlgebraVec, h: f64) -> Vector {
    let n = rsys.n();
    let g = rsys.metric();
    let gxx = g.view((0, 0), (n, n)).into_owned();
    let gxg = g.view((0, n), (n, ALGEBRA_DIM)).into_owned();
    let rhs = pre - gxg * Vector::from_column_slice(xi.as_slice());
    match lu_solve(&gxx, &rhs) {
        Ok(v) => x + v * h,
        Err(_) => x.clone(),
    }
}

/// Physical data at a node: shape, shape velocity and angular velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedInitial {
    pub x: Vector,
    /// Derived from the constraints when absent (Chaplygin only).
    pub x_dot: Option<Vector>,
    pub omega: AlgebraVec,
}

/// The staged reduced RATTLE scheme bound to a system and retraction.
#[derive(Clone)]
pub struct ReducedRattle {
    pub rsys: ReducedSystem,
    pub ld: Arc<dyn RetractedDiscreteLagrangian>,
    pub retraction: Arc<dyn Retraction>,
    pub newton: NewtonConfig,
    shape_names: Vec<String>,
}

impl fmt::Debug for ReducedRattle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReducedRattle")
            .field("system", &self.rsys)
            .field("retraction", &self.retraction.name())
            .finish()
    }
}

impl ReducedRattle {
    /// Quadratic Lagrangian from the system metric and the Cayley map.
    pub fn new(rsys: ReducedSystem, newton: NewtonConfig) -> Self {
        let shape_names = (1..=rsys.n()).map(|i| format!("x{i}")).collect();
        Self {
            ld: Arc::new(QuadraticLagrangian::new(rsys.clone())),
            rsys,
            retraction: Arc::new(crate::lie_so3::Cayley),
            newton,
            shape_names,
        }
    }

    pub fn with_retraction(mut self, r: Arc<dyn Retraction>) -> Self {
        self.retraction = r;
        self
    }

    pub fn with_shape_names(mut self, names: Vec<String>) -> Self {
        self.shape_names = names;
        self
    }

    pub fn step_state(&self, s: &ReducedState, h: f64) -> Result<(ReducedState, usize)> {
        reduced_rattle_step(&self.rsys, self.ld.as_ref(), self.retraction.as_ref(), s, h, &self.newton)
    }

    /// State at a node from physical data and a multiplier guess.
    fn seed(&self, x: &Vector, p: &Vector, m_bar: &AlgebraVec, lambda: &Vector, h: f64) -> Result<ReducedState> {
        let n = self.rsys.n();
        let mut m_alg = *m_bar;
        if self.rsys.m() > 0 {
            let (_, eta) = split_annihilator(&self.rsys.annihilator(x), n);
            let corr = eta.transpose() * lambda * (0.5 * h);
            m_alg -= AlgebraVec::new(corr[0], corr[1], corr[2]);
        }
        let pre = shape_pre(&self.rsys, x, p, lambda, h);
        let omega = self.omega_guess(p, m_bar);
        let x1_guess = explicit_shape_guess(&self.rsys, x, &pre, &omega, h);
        let (_, xi, _) =
            recover_xi(self.ld.as_ref(), self.retraction.as_ref(), x, &pre, &m_alg, &x1_guess, &omega, h, &self.newton)?;
        Ok(ReducedState { x: x.clone(), p: p.clone(), xi, m_alg, lambda: lambda.clone() })
    }

    fn omega_guess(&self, p: &Vector, m_bar: &AlgebraVec) -> AlgebraVec {
        let v = self.rsys.metric_inv() * join(p, m_bar);
        let n = self.rsys.n();
        AlgebraVec::new(v[n], v[n + 1], v[n + 2])
    }

    /// Node-averaged fiber velocity `G^-1 (p + Mbar)`.
    pub fn fiber_velocity(&self, s: &ReducedState, h: f64) -> Vector {
        let mbar = averaged_algebra_momentum(&self.rsys, s, h);
        self.rsys.metric_inv() * join(&s.p, &mbar)
    }
}

impl Integrator for ReducedRattle {
    type State = ReducedState;
    type Initial = ReducedInitial;

    fn name(&self) -> &str {
        "reduced_rattle"
    }

    /// The multiplier at the first node is the fixed point of
    /// `lambda_0 -> lambda_1`, which removes the alternating mode of the
    /// node multipliers.
    fn initialize(&self, init: &ReducedInitial, h: f64) -> Result<ReducedState> {
        let n = self.rsys.n();
        let x_dot = init
            .x_dot
            .clone()
            .ok_or_else(|| Error::InvalidArgument("reduced_rattle needs the initial shape velocity".into()))?;
        if init.x.len() != n || x_dot.len() != n {
            return Err(Error::InvalidArgument(format!("shape dimension must be {n}")));
        }
        let vel = join(&x_dot, &init.omega);
        let ann = self.rsys.annihilator(&init.x);
        if ann.nrows() > 0 {
            let r = (&ann * (&vel - self.rsys.affine_section(&init.x))).amax();
            if r > model::CONSISTENCY_TOL * vel.amax().max(1.0) {
                return Err(Error::InconsistentInitialState(r));
            }
        }
        let z = self.rsys.metric() * vel;
        let p = z.rows(0, n).into_owned();
        let m_bar = AlgebraVec::new(z[n], z[n + 1], z[n + 2]);
        let m = self.rsys.m();
        if m == 0 || h == 0.0 {
            return self.seed(&init.x, &p, &m_bar, &Vector::zeros(m), h);
        }
        let gap = |lam: &Vector| -> Vector {
            match self.seed(&init.x, &p, &m_bar, lam, h).and_then(|s| self.step_state(&s, h)) {
                Ok((s1, _)) => s1.lambda - lam,
                Err(_) => Vector::from_element(lam.len(), f64::NAN),
            }
        };
        let sol = newton_solve(gap, &Vector::zeros(m), &self.newton)?;
        self.seed(&init.x, &p, &m_bar, &sol.x, h)
    }

    fn step(&self, s: &ReducedState, h: f64) -> Result<(ReducedState, usize)> {
        self.step_state(s, h)
    }

    fn observe(&self, s: &ReducedState, h: f64) -> Observation {
        let mbar = averaged_algebra_momentum(&self.rsys, s, h);
        let r = model::reduced_constraint_residual(&self.rsys, &s.x, &s.p, &mbar);
        Observation {
            position: s.x.clone(),
            velocity: self.fiber_velocity(s, h),
            energy: model::reduced_energy(&self.rsys, &s.x, &s.p, &mbar),
            constraint_residual: if r.is_empty() { 0.0 } else { r.amax() },
        }
    }

    fn component_names(&self) -> Vec<String> {
        let mut names = self.shape_names.clone();
        names.extend(["w1", "w2", "w3"].map(String::from));
        names
    }

    fn components(&self, s: &ReducedState, h: f64) -> Vec<f64> {
        let v = self.fiber_velocity(s, h);
        let n = self.rsys.n();
        s.x.iter().chain(v.rows(n, ALGEBRA_DIM).iter()).copied().collect()
    }
}

/// `W_{k+1} = W_k cay(h xi_k)`.
pub fn reconstruct(w0: &GroupElem, xis: &[AlgebraVec], h: f64) -> Vec<GroupElem> {
    let mut out = Vec::with_capacity(xis.len() + 1);
    out.push(*w0);
    let mut w = *w0;
    for xi in xis {
        w = w * cay(&(xi * h));
        out.push(w);
    }
    out
}
