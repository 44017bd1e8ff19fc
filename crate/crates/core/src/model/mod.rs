//! Mechanical system descriptions, projectors onto the constraint
//! distribution, and the continuous equations of motion with the
//! multipliers eliminated.

use std::fmt;
use std::sync::Arc;

use crate::analysis::{Diagnostics, Trajectory};
use crate::error::{Error, Result};
use crate::numerics::{lu_solve, lu_solve_mat, Mat, Vector};

pub mod systems;

pub type ScalarFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&Vector) -> Mat + Send + Sync>;

/// Finite-difference step for derivatives of the constraint rows and of
/// the affine field.
pub const DERIV_FD_STEP: f64 = 1e-6;

/// Tolerance for accepting a user-supplied initial state.
pub const CONSISTENCY_TOL: f64 = 1e-9;

/// Constant mass matrix, potential, constraint rows `mu(q)` (m x n) and an
/// optional affine drift `Y(q)`. Constraints read `mu(q) (qdot - Y(q)) = 0`.
#[derive(Clone)]
pub struct FlatSystem {
    name: String,
    mass: Mat,
    mass_inv: Mat,
    potential: ScalarFn,
    grad_potential: VectorFn,
    constraints: MatrixFn,
    m: usize,
    affine: Option<VectorFn>,
}

impl fmt::Debug for FlatSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlatSystem")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("m", &self.m)
            .field("affine", &self.affine.is_some())
            .finish()
    }
}

fn check_spd(g: &Mat, what: &str) -> Result<Mat> {
    if g.nrows() == 0 || g.nrows() != g.ncols() {
        return Err(Error::InvalidArgument(format!("{what} must be square and non-empty")));
    }
    if (g - g.transpose()).amax() > 1e-12 * g.amax() {
        return Err(Error::InvalidArgument(format!("{what} is not symmetric")));
    }
    let ch = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument(format!("{what} is not positive definite")))?;
    Ok(ch.inverse())
}

impl FlatSystem {
    /// A system with zero potential and no affine term.
    pub fn new(name: impl Into<String>, mass: Mat, m: usize, constraints: MatrixFn) -> Result<Self> {
        let mass_inv = check_spd(&mass, "mass matrix")?;
        let n = mass.nrows();
        Ok(Self {
            name: name.into(),
            mass,
            mass_inv,
            potential: Arc::new(|_| 0.0),
            grad_potential: Arc::new(move |_| Vector::zeros(n)),
            constraints,
            m,
            affine: None,
        })
    }

    pub fn unconstrained(name: impl Into<String>, mass: Mat) -> Result<Self> {
        let n = mass.nrows();
        Self::new(name, mass, 0, Arc::new(move |_| Mat::zeros(0, n)))
    }

    pub fn with_potential(mut self, v: ScalarFn, grad: VectorFn) -> Self {
        self.potential = v;
        self.grad_potential = grad;
        self
    }

    pub fn with_affine(mut self, y: VectorFn) -> Self {
        self.affine = Some(y);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.mass.nrows()
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn mass(&self) -> &Mat {
        &self.mass
    }
    pub fn mass_inv(&self) -> &Mat {
        &self.mass_inv
    }
    pub fn is_affine(&self) -> bool {
        self.affine.is_some()
    }
    pub fn potential(&self, q: &Vector) -> f64 {
        (self.potential)(q)
    }
    pub fn grad_potential(&self, q: &Vector) -> Vector {
        (self.grad_potential)(q)
    }
    pub fn constraints(&self, q: &Vector) -> Mat {
        if self.m == 0 {
            return Mat::zeros(0, self.n());
        }
        (self.constraints)(q)
    }
    pub fn affine_field(&self, q: &Vector) -> Vector {
        match &self.affine {
            Some(y) => y(q),
            None => Vector::zeros(self.n()),
        }
    }
    /// `Pi = M Y`, the affine field as a covector.
    pub fn pi(&self, q: &Vector) -> Vector {
        &self.mass * self.affine_field(q)
    }

    /// `d/de mu(q + e v)` by central differences.
    pub fn constraints_directional(&self, q: &Vector, v: &Vector) -> Mat {
        let d = DERIV_FD_STEP;
        (self.constraints(&(q + v * d)) - self.constraints(&(q - v * d))) / (2.0 * d)
    }

    /// `d/de Y(q + e v)` by central differences.
    pub fn affine_directional(&self, q: &Vector, v: &Vector) -> Vector {
        if self.affine.is_none() {
            return Vector::zeros(self.n());
        }
        let d = DERIV_FD_STEP;
        (self.affine_field(&(q + v * d)) - self.affine_field(&(q - v * d))) / (2.0 * d)
    }

    /// `C(q) = mu M^-1 mu^T`.
    pub fn constraint_gram(&self, q: &Vector) -> Mat {
        let mu = self.constraints(q);
        &mu * &self.mass_inv * mu.transpose()
    }
}

/// `(q, p, lambda)`: configuration, averaged momentum, multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: Vector,
    pub p: Vector,
    pub lambda: Vector,
}

impl PhaseState {
    pub fn new(q: Vector, p: Vector, lambda: Vector) -> Self {
        Self { q, p, lambda }
    }

    /// Max-abs distance over all three blocks.
    pub fn distance(&self, other: &PhaseState) -> f64 {
        let dl = if self.lambda.is_empty() { 0.0 } else { (&self.lambda - &other.lambda).amax() };
        (&self.q - &other.q).amax().max((&self.p - &other.p).amax()).max(dl)
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).chain(self.lambda.iter()).all(|v| v.is_finite())
    }
}

fn map_rank(e: Error) -> Error {
    match e {
        Error::SingularMatrix { .. } => Error::RankDeficient,
        e => e,
    }
}

fn projector_pair(g_inv: &Mat, ann: &Mat) -> Result<(Mat, Mat)> {
    let dim = g_inv.nrows();
    let id = Mat::identity(dim, dim);
    if ann.nrows() == 0 {
        return Ok((id, Mat::zeros(dim, dim)));
    }
    let c = ann * g_inv * ann.transpose();
    let z = lu_solve_mat(&c, ann).map_err(map_rank)?;
    let q = g_inv * ann.transpose() * z;
    Ok((&id - &q, q))
}

/// Projectors `(P, Q)` onto the constraint distribution and its metric
/// complement: `Q = M^-1 mu^T C^-1 mu`, `P = I - Q`.
pub fn projectors(sys: &FlatSystem, q: &Vector) -> Result<(Mat, Mat)> {
    projector_pair(sys.mass_inv(), &sys.constraints(q))
}

/// `mu(q) M^-1 (p - Pi(q))`.
pub fn constraint_residual(sys: &FlatSystem, q: &Vector, p: &Vector) -> Vector {
    let mu = sys.constraints(q);
    if mu.nrows() == 0 {
        return Vector::zeros(0);
    }
    mu * (sys.mass_inv() * (p - sys.pi(q)))
}

/// `p^T M^-1 p / 2 + V(q)`.
pub fn energy(sys: &FlatSystem, q: &Vector, p: &Vector) -> f64 {
    0.5 * p.dot(&(sys.mass_inv() * p)) + sys.potential(q)
}

/// Checks `mu M^-1 (p - Pi) = 0` at a user-supplied state.
pub fn check_consistent(sys: &FlatSystem, q: &Vector, p: &Vector) -> Result<()> {
    let r = constraint_residual(sys, q, p);
    let res = if r.is_empty() { 0.0 } else { r.amax() };
    if res > CONSISTENCY_TOL * p.amax().max(1.0) {
        return Err(Error::InconsistentInitialState(res));
    }
    Ok(())
}

/// The multiplier of the continuous equations, obtained by differentiating
/// the constraint along the flow.
pub fn continuous_multiplier(sys: &FlatSystem, q: &Vector, p: &Vector) -> Result<Vector> {
    if sys.m() == 0 {
        return Ok(Vector::zeros(0));
    }
    let mu = sys.constraints(q);
    let v = sys.mass_inv() * p;
    let y = sys.affine_field(q);
    let mut rhs = sys.constraints_directional(q, &v) * (&v - &y) - &mu * (sys.mass_inv() * sys.grad_potential(q));
    if sys.is_affine() {
        rhs -= &mu * sys.affine_directional(q, &v);
    }
    lu_solve(&sys.constraint_gram(q), &rhs).map_err(map_rank)
}

/// Eliminated-multiplier Hamiltonian vector field.
pub fn continuous_rhs(sys: &FlatSystem, q: &Vector, p: &Vector) -> Result<(Vector, Vector)> {
    let lambda = continuous_multiplier(sys, q, p)?;
    let qdot = sys.mass_inv() * p;
    let mut pdot = -sys.grad_potential(q);
    if sys.m() > 0 {
        pdot -= sys.constraints(q).transpose() * lambda;
    }
    Ok((qdot, pdot))
}

/// Classical RK4 on [`continuous_rhs`]; the multiplier slot of each state
/// holds the continuous multiplier at that point. The step is adjusted to
/// `T / round(T / h_ref)`.
pub fn reference_solve(sys: &FlatSystem, s0: &PhaseState, t_end: f64, h_ref: f64) -> Result<Trajectory<PhaseState>> {
    if !(h_ref > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidArgument("reference_solve needs h_ref > 0 and T >= 0".into()));
    }
    check_consistent(sys, &s0.q, &s0.p)?;
    // Shrink the step so that it divides the horizon exactly.
    let steps = (t_end / h_ref).round().max(if t_end > 0.0 { 1.0 } else { 0.0 }) as usize;
    let h = if steps > 0 { t_end / steps as f64 } else { h_ref };
    let diag = |q: &Vector, p: &Vector| {
        let r = constraint_residual(sys, q, p);
        Diagnostics {
            energy: energy(sys, q, p),
            constraint_residual: if r.is_empty() { 0.0 } else { r.amax() },
            newton_iters: 0,
        }
    };
    let mut traj = Trajectory::new(h);
    let (mut q, mut p) = (s0.q.clone(), s0.p.clone());
    let lambda0 = continuous_multiplier(sys, &q, &p)?;
    traj.push(PhaseState::new(q.clone(), p.clone(), lambda0), diag(&q, &p));
    for _ in 0..steps {
        let (k1q, k1p) = continuous_rhs(sys, &q, &p)?;
        let (k2q, k2p) = continuous_rhs(sys, &(&q + &k1q * (h / 2.0)), &(&p + &k1p * (h / 2.0)))?;
        let (k3q, k3p) = continuous_rhs(sys, &(&q + &k2q * (h / 2.0)), &(&p + &k2p * (h / 2.0)))?;
        let (k4q, k4p) = continuous_rhs(sys, &(&q + &k3q * h), &(&p + &k3p * h))?;
        q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
        p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
        let lambda = continuous_multiplier(sys, &q, &p)?;
        traj.push(PhaseState::new(q.clone(), p.clone(), lambda), diag(&q, &p));
    }
    Ok(traj)
}

/// Trivial-bundle system on `R^n x so(3)`: constant block metric, constraint
/// rows `[mu | eta]` (m x (n+3)), optional affine section and a shape potential.
#[derive(Clone)]
pub struct ReducedSystem {
    name: String,
    n: usize,
    metric: Mat,
    metric_inv: Mat,
    annihilator: MatrixFn,
    m: usize,
    affine: Option<VectorFn>,
    potential: ScalarFn,
    grad_potential: VectorFn,
}

impl fmt::Debug for ReducedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReducedSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("affine", &self.affine.is_some())
            .finish()
    }
}

/// Dimension of the Lie algebra of SO(3).
pub const ALGEBRA_DIM: usize = 3;

impl ReducedSystem {
    pub fn new(name: impl Into<String>, n: usize, metric: Mat, m: usize, annihilator: MatrixFn) -> Result<Self> {
        if metric.nrows() != n + ALGEBRA_DIM {
            return Err(Error::InvalidArgument(format!(
                "metric must be {0}x{0}",
                n + ALGEBRA_DIM
            )));
        }
        let metric_inv = check_spd(&metric, "bundle metric")?;
        Ok(Self {
            name: name.into(),
            n,
            metric,
            metric_inv,
            annihilator,
            m,
            affine: None,
            potential: Arc::new(|_| 0.0),
            grad_potential: Arc::new(move |_| Vector::zeros(n)),
        })
    }

    pub fn with_potential(mut self, v: ScalarFn, grad: VectorFn) -> Self {
        self.potential = v;
        self.grad_potential = grad;
        self
    }

    pub fn with_affine(mut self, y: VectorFn) -> Self {
        self.affine = Some(y);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        ALGEBRA_DIM
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn metric(&self) -> &Mat {
        &self.metric
    }
    pub fn metric_inv(&self) -> &Mat {
        &self.metric_inv
    }
    pub fn is_affine(&self) -> bool {
        self.affine.is_some()
    }
    pub fn annihilator(&self, x: &Vector) -> Mat {
        if self.m == 0 {
            return Mat::zeros(0, self.n + ALGEBRA_DIM);
        }
        (self.annihilator)(x)
    }
    pub fn affine_section(&self, x: &Vector) -> Vector {
        match &self.affine {
            Some(y) => y(x),
            None => Vector::zeros(self.n + ALGEBRA_DIM),
        }
    }
    /// `G Y`, the affine section as a covector on the fiber.
    pub fn pi(&self, x: &Vector) -> Vector {
        &self.metric * self.affine_section(x)
    }
    pub fn potential(&self, x: &Vector) -> f64 {
        (self.potential)(x)
    }
    pub fn grad_potential(&self, x: &Vector) -> Vector {
        (self.grad_potential)(x)
    }
}

/// `(x, p, xi, M, lambda)`: shape, shape momentum, algebra velocity of the
/// current interval, algebra momentum, multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub x: Vector,
    pub p: Vector,
    pub xi: crate::lie_so3::AlgebraVec,
    pub m_alg: crate::lie_so3::AlgebraVec,
    pub lambda: Vector,
}

/// Stacks a shape covector and an algebra covector.
pub fn join(p: &Vector, m: &crate::lie_so3::AlgebraVec) -> Vector {
    let mut out = Vector::zeros(p.len() + ALGEBRA_DIM);
    out.rows_mut(0, p.len()).copy_from(p);
    out.rows_mut(p.len(), ALGEBRA_DIM).copy_from(m);
    out
}

pub fn reduced_projectors(rsys: &ReducedSystem, x: &Vector) -> Result<(Mat, Mat)> {
    projector_pair(rsys.metric_inv(), &rsys.annihilator(x))
}

/// `annihilator G^-1 ((p + M) - Pi)`.
pub fn reduced_constraint_residual(
    rsys: &ReducedSystem,
    x: &Vector,
    p: &Vector,
    m: &crate::lie_so3::AlgebraVec,
) -> Vector {
    let ann = rsys.annihilator(x);
    if ann.nrows() == 0 {
        return Vector::zeros(0);
    }
    ann * (rsys.metric_inv() * (join(p, m) - rsys.pi(x)))
}

pub fn reduced_energy(rsys: &ReducedSystem, x: &Vector, p: &Vector, m: &crate::lie_so3::AlgebraVec) -> f64 {
    let z = join(p, m);
    0.5 * z.dot(&(rsys.metric_inv() * &z)) + rsys.potential(x)
}

#[cfg(test)]
mod tests {
    use super::systems::*;
    use super::*;
    use nalgebra::dvector;

    fn const_rows(rows: Mat) -> MatrixFn {
        Arc::new(move |_| rows.clone())
    }

    #[test]
    fn axis_aligned_projector() {
        let sys = FlatSystem::new("t", Mat::identity(3, 3), 1, const_rows(Mat::from_row_slice(1, 3, &[0.0, 0.0, 1.0])))
            .unwrap();
        let (p, q) = projectors(&sys, &Vector::zeros(3)).unwrap();
        assert!((q - Mat::from_diagonal(&dvector![0.0, 0.0, 1.0])).amax() < 1e-15);
        assert!((p - Mat::from_diagonal(&dvector![1.0, 1.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn diagonal_constraint_projector() {
        // C = 2, Q = mu^T mu / 2
        let sys = FlatSystem::new("t", Mat::identity(3, 3), 1, const_rows(Mat::from_row_slice(1, 3, &[1.0, 1.0, 0.0])))
            .unwrap();
        let (_, q) = projectors(&sys, &Vector::zeros(3)).unwrap();
        let expect = Mat::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert!((q - expect).amax() < 1e-15);
    }

    #[test]
    fn unconstrained_projector() {
        let sys = FlatSystem::unconstrained("t", Mat::identity(2, 2)).unwrap();
        let (p, q) = projectors(&sys, &Vector::zeros(2)).unwrap();
        assert_eq!(p, Mat::identity(2, 2));
        assert_eq!(q, Mat::zeros(2, 2));
    }

    #[test]
    fn rank_deficient_rows() {
        let rows = Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let sys = FlatSystem::new("t", Mat::identity(3, 3), 2, const_rows(rows)).unwrap();
        assert!(matches!(projectors(&sys, &Vector::zeros(3)), Err(Error::RankDeficient)));
    }

    #[test]
    fn rejects_indefinite_mass() {
        let m = Mat::from_diagonal(&dvector![1.0, -1.0]);
        assert!(FlatSystem::unconstrained("t", m).is_err());
    }

    #[test]
    fn rhs_constant_rows_no_potential() {
        let sys = FlatSystem::new("t", Mat::identity(2, 2), 1, const_rows(Mat::from_row_slice(1, 2, &[0.0, 1.0])))
            .unwrap();
        let (qd, pd) = continuous_rhs(&sys, &dvector![0.3, 0.1], &dvector![1.0, 0.0]).unwrap();
        assert_eq!(qd, dvector![1.0, 0.0]);
        assert!(pd.amax() < 1e-15);
    }

    #[test]
    fn rhs_unconstrained_is_hamiltonian() {
        let sys = harmonic_oscillator();
        let (qd, pd) = continuous_rhs(&sys, &dvector![0.5], &dvector![2.0]).unwrap();
        assert_eq!(qd, dvector![2.0]);
        assert_eq!(pd, dvector![-0.5]);
    }

    #[test]
    fn rk4_preserves_particle_constraint() {
        let sys = nonholonomic_particle(false, 0.0);
        let q = dvector![0.2, 0.5, -0.1];
        let p = dvector![1.0, 0.3, 0.5];
        let s0 = PhaseState::new(q, p, Vector::zeros(1));
        let traj = reference_solve(&sys, &s0, 1.0, 1e-3).unwrap();
        let worst = traj.diagnostics.iter().map(|d| d.constraint_residual).fold(0.0, f64::max);
        assert!(worst <= 1e-8, "{worst}");
    }

    #[test]
    fn rk4_harmonic_period() {
        let sys = harmonic_oscillator();
        let s0 = PhaseState::new(dvector![1.0], dvector![0.0], Vector::zeros(0));
        let traj = reference_solve(&sys, &s0, 2.0 * std::f64::consts::PI, 1e-3).unwrap();
        let last = traj.states.last().unwrap();
        assert!((last.q[0] - 1.0).abs() < 1e-7 && last.p[0].abs() < 1e-7);
    }

    #[test]
    fn rk4_free_motion_is_exact() {
        let sys = FlatSystem::new("t", Mat::identity(2, 2), 1, const_rows(Mat::from_row_slice(1, 2, &[0.0, 1.0])))
            .unwrap();
        let s0 = PhaseState::new(dvector![0.0, 1.0], dvector![2.0, 0.0], Vector::zeros(1));
        let traj = reference_solve(&sys, &s0, 1.0, 0.125).unwrap();
        let last = traj.states.last().unwrap();
        assert_eq!(last.q, dvector![2.0, 1.0]);
        assert_eq!(last.p, dvector![2.0, 0.0]);
    }

    #[test]
    fn rk4_energy_drift_particle() {
        let sys = nonholonomic_particle(true, 0.0);
        let s0 = PhaseState::new(dvector![1.0, 0.0, 0.0], dvector![0.3, 1.0, 0.0], Vector::zeros(1));
        let traj = reference_solve(&sys, &s0, 10.0, 1e-4).unwrap();
        let e0 = traj.diagnostics[0].energy;
        let drift = traj.diagnostics.iter().map(|d| (d.energy - e0).abs()).fold(0.0, f64::max);
        assert!(drift <= 1e-9, "{drift}");
    }

    #[test]
    fn energy_examples() {
        let sys = harmonic_oscillator();
        assert_eq!(energy(&sys, &dvector![1.0], &dvector![0.0]), 0.5);
        let free = FlatSystem::unconstrained("t", Mat::identity(2, 2)).unwrap();
        assert_eq!(energy(&free, &dvector![3.0, 4.0], &dvector![0.0, 0.0]), 0.0);
    }

    #[test]
    fn inconsistent_state_rejected() {
        let sys = nonholonomic_particle(false, 0.0);
        // mu = (y, 0, -1) at y = 1: p_x - p_z must vanish
        let err = check_consistent(&sys, &dvector![0.0, 1.0, 0.0], &dvector![1.0, 0.0, 0.0]);
        assert!(matches!(err, Err(Error::InconsistentInitialState(_))));
    }

    #[test]
    fn residual_on_kernel_vanishes() {
        let sys = constrained_2d(0.0);
        // mu = (1,1), M = diag(1,2): p = (1,-2) gives v = (1,-1)
        let r = constraint_residual(&sys, &dvector![0.4, 0.1], &dvector![1.0, -2.0]);
        assert!(r.amax() < 1e-15);
    }
}
