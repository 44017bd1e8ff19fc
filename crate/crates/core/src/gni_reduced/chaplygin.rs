//! Chaplygin sphere rolling without slipping on a table that spins about
//! the vertical axis with constant rate `Omega`.
//!
//! The discrete equations are written in terms of the interval velocity
//! `v = (q_{k+1} - q_k)/h` and the interval angular velocity `w^k`, which
//! avoids cancellation in `q_{k+1} - q_k` at small `h`.

use std::sync::Arc;

use nalgebra::{dvector, Vector2};

use super::ReducedInitial;
use crate::analysis::{Integrator, Observation};
use crate::error::{Error, Result};
use crate::lie_so3::AlgebraVec;
use crate::model::ReducedSystem;
use crate::numerics::{newton_solve, Mat, NewtonConfig, Vector};

pub type Planar = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChaplyginParams {
    pub mass: f64,
    pub radius: f64,
    pub table_rate: f64,
    pub inertia: [f64; 3],
}

impl ChaplyginParams {
    pub fn homogeneous(mass: f64, radius: f64, table_rate: f64, inertia: f64) -> Self {
        Self { mass, radius, table_rate, inertia: [inertia; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mass > 0.0
            && self.radius > 0.0
            && self.inertia.iter().all(|&i| i > 0.0)
            && self.table_rate.is_finite();
        if !ok {
            return Err(Error::InvalidArgument(format!("bad sphere parameters {self:?}")));
        }
        Ok(())
    }

    /// The reduced system on `R^2 x so(3)`: metric `diag(m, m, I1, I2, I3)`,
    /// rows `(1,0,0,-r,0)` and `(0,1,r,0,0)`, affine section
    /// `(-Omega y, Omega x, 0, 0, 0)`.
    pub fn reduced_system(&self) -> ReducedSystem {
        let [i1, i2, i3] = self.inertia;
        let m = self.mass;
        let r = self.radius;
        let metric = Mat::from_diagonal(&dvector![m, m, i1, i2, i3]);
        let ann = Mat::from_row_slice(2, 5, &[1.0, 0.0, 0.0, -r, 0.0, 0.0, 1.0, r, 0.0, 0.0]);
        let mut rs = ReducedSystem::new("chaplygin", 2, metric, 2, Arc::new(move |_| ann.clone()))
            .expect("positive parameters");
        if self.table_rate != 0.0 {
            let w = self.table_rate;
            rs = rs.with_affine(Arc::new(move |x: &Vector| dvector![-w * x[1], w * x[0], 0.0, 0.0, 0.0]));
        }
        rs
    }

    /// Contact-point velocity required by the constraints.
    pub fn constraint_velocity(&self, q: &Planar, w: &AlgebraVec) -> Planar {
        let (r, om) = (self.radius, self.table_rate);
        Planar::new(r * w.y - om * q.y, -r * w.x + om * q.x)
    }

    /// `m |v|^2 / 2 + w^T I w / 2`.
    pub fn energy(&self, v: &Planar, w: &AlgebraVec) -> f64 {
        let [i1, i2, i3] = self.inertia;
        0.5 * self.mass * v.norm_squared() + 0.5 * (i1 * w.x * w.x + i2 * w.y * w.y + i3 * w.z * w.z)
    }
}

/// `q_1` from the forward-difference form of the two constraint equations.
pub fn chaplygin_init(params: &ChaplyginParams, q0: &Planar, w0: &AlgebraVec, h: f64) -> Planar {
    q0 + params.constraint_velocity(q0, w0) * h
}

fn inertia_norm(i: &[f64; 3], w: &AlgebraVec) -> f64 {
    i[0] * w.x * w.x + i[1] * w.y * w.y + i[2] * w.z * w.z
}

/// The five discrete equations at node `q_k`. Unknowns are the interval
/// velocity `v` and `w = w^k`; `vp`, `wp` belong to the previous interval.
pub fn chaplygin_residual(
    params: &ChaplyginParams,
    q: &Planar,
    vp: &Planar,
    wp: &AlgebraVec,
    v: &Planar,
    w: &AlgebraVec,
    h: f64,
) -> [f64; 5] {
    let [i1, i2, i3] = params.inertia;
    let (m, r, om) = (params.mass, params.radius, params.table_rate);
    let n = inertia_norm(&params.inertia, w);
    let np = inertia_norm(&params.inertia, wp);
    let hh = h * h / 4.0;
    let r1 = m * r * (v.x - vp.x)
        + i2 * (w.y - wp.y)
        + 0.5 * h * (i1 - i3) * (w.x * w.z + wp.x * wp.z)
        + hh * (w.y * n - wp.y * np);
    let r2 = m * r * (v.y - vp.y)
        - i1 * (w.x - wp.x)
        - 0.5 * h * (i3 - i2) * (w.y * w.z + wp.y * wp.z)
        - hh * (w.x * n - wp.x * np);
    let r3 = i3 * (w.z - wp.z) + 0.5 * h * (i2 - i1) * (w.x * w.y + wp.x * wp.y) + hh * (w.z * n - wp.z * np);
    let r4 = 0.5 * (v.x + vp.x) + om * q.y
        - 0.5 * r * (w.y + wp.y)
        - 0.25 * r * h * (i1 - i3) / i2 * (w.x * w.z - wp.x * wp.z)
        - h * h * r / (8.0 * i2) * (w.y * n + wp.y * np);
    let r5 = 0.5 * (v.y + vp.y) - om * q.x
        + 0.5 * r * (w.x + wp.x)
        + 0.25 * r * h * (i3 - i2) / i1 * (w.y * w.z - wp.y * wp.z)
        + h * h * r / (8.0 * i1) * (w.x * n + wp.x * np);
    [r1, r2, r3, r4, r5]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaplyginStep {
    pub v: Planar,
    pub w: AlgebraVec,
    pub iterations: usize,
    /// Max of the two discrete constraint residuals at the solution.
    pub constraint_residual: f64,
}

/// Solves the node equations at `q` for the next interval velocity and
/// angular velocity, starting from the previous ones.
pub fn solve_node(
    params: &ChaplyginParams,
    q: &Planar,
    vp: &Planar,
    wp: &AlgebraVec,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<ChaplyginStep> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("chaplygin step needs h > 0".into()));
    }
    let f = |u: &Vector| {
        let v = Planar::new(u[0], u[1]);
        let w = AlgebraVec::new(u[2], u[3], u[4]);
        Vector::from_row_slice(&chaplygin_residual(params, q, vp, wp, &v, &w, h))
    };
    let u0 = dvector![vp.x, vp.y, wp.x, wp.y, wp.z];
    let sol = newton_solve(f, &u0, cfg)?;
    let v = Planar::new(sol.x[0], sol.x[1]);
    let w = AlgebraVec::new(sol.x[2], sol.x[3], sol.x[4]);
    let res = chaplygin_residual(params, q, vp, wp, &v, &w, h);
    Ok(ChaplyginStep { v, w, iterations: sol.iterations, constraint_residual: res[3].abs().max(res[4].abs()) })
}

/// Three-point form: returns `(q_{k+1}, w^k)` from `q_{k-1}`, `q_k`, `w^{k-1}`.
pub fn chaplygin_step(
    params: &ChaplyginParams,
    q_prev: &Planar,
    q_curr: &Planar,
    w_prev: &AlgebraVec,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<(Planar, AlgebraVec)> {
    let vp = (q_curr - q_prev) / h;
    let out = solve_node(params, q_curr, &vp, w_prev, h, cfg)?;
    Ok((q_curr + out.v * h, out.w))
}

/// Node `k` together with the intervals on both sides of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaplyginState {
    pub q: Planar,
    pub v_prev: Planar,
    pub w_prev: AlgebraVec,
    pub v_next: Planar,
    /// `w^k`, solved at this node together with `v_next`.
    pub w_next: AlgebraVec,
    pub constraint_residual: f64,
}

impl ChaplyginState {
    /// Central-difference contact velocity at the node.
    pub fn nodal_velocity(&self) -> Planar {
        (self.v_prev + self.v_next) * 0.5
    }

    /// Average of the angular velocities of the adjacent intervals.
    pub fn nodal_omega(&self) -> AlgebraVec {
        (self.w_prev + self.w_next) * 0.5
    }
}

/// The specialized sphere scheme as an [`Integrator`].
#[derive(Debug, Clone)]
pub struct ChaplyginGni {
    pub params: ChaplyginParams,
    pub newton: NewtonConfig,
}

impl Integrator for ChaplyginGni {
    type State = ChaplyginState;
    type Initial = ReducedInitial;

    fn name(&self) -> &str {
        "chaplygin_gni"
    }

    /// Node 0 uses the constraint velocity on both sides; node 1 comes from
    /// the two-point start.
    fn initialize(&self, init: &ReducedInitial, h: f64) -> Result<ChaplyginState> {
        self.params.validate()?;
        if init.x.len() != 2 {
            return Err(Error::InvalidArgument("sphere contact point is two-dimensional".into()));
        }
        let q0 = Planar::new(init.x[0], init.x[1]);
        let v0 = self.params.constraint_velocity(&q0, &init.omega);
        if let Some(xd) = &init.x_dot {
            let r = (Planar::new(xd[0], xd[1]) - v0).amax();
            if r > crate::model::CONSISTENCY_TOL * v0.amax().max(1.0) {
                return Err(Error::InconsistentInitialState(r));
            }
        }
        let q1 = chaplygin_init(&self.params, &q0, &init.omega, h);
        let v = if h > 0.0 { (q1 - q0) / h } else { v0 };
        Ok(ChaplyginState { q: q0, v_prev: v, w_prev: init.omega, v_next: v, w_next: init.omega, constraint_residual: 0.0 })
    }

    fn step(&self, s: &ChaplyginState, h: f64) -> Result<(ChaplyginState, usize)> {
        let q = s.q + s.v_next * h;
        let out = solve_node(&self.params, &q, &s.v_next, &s.w_next, h, &self.newton)?;
        Ok((
            ChaplyginState {
                q,
                v_prev: s.v_next,
                w_prev: s.w_next,
                v_next: out.v,
                w_next: out.w,
                constraint_residual: out.constraint_residual,
            },
            out.iterations,
        ))
    }

    /// Reports the angular velocity `w^k` solved at the node. The energy
    /// uses node-centered velocities.
    fn observe(&self, s: &ChaplyginState, _h: f64) -> Observation {
        let w = s.w_next;
        Observation {
            position: dvector![s.q.x, s.q.y],
            velocity: dvector![w.x, w.y, w.z],
            energy: self.params.energy(&s.nodal_velocity(), &s.nodal_omega()),
            constraint_residual: s.constraint_residual,
        }
    }

    fn component_names(&self) -> Vec<String> {
        ["x", "y", "w1", "w2", "w3"].map(String::from).to_vec()
    }

    fn components(&self, s: &ChaplyginState, _h: f64) -> Vec<f64> {
        let w = s.w_next;
        vec![s.q.x, s.q.y, w.x, w.y, w.z]
    }
}
