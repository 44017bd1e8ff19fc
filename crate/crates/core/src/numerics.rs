//! Dense linear solves and a damped Newton iteration.
//!
//! Every implicit step in the crate goes through [`lu_solve`] or
//! [`newton_solve`]. The systems are tiny (at most ten unknowns), so the
//! Jacobian defaults to forward finite differences.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative pivot threshold below which a matrix counts as singular.
pub const PIVOT_TOL: f64 = 1e-14;

/// Maximum number of step halvings in the damped Newton iteration.
const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub residual_tol: f64,
    pub max_iters: usize,
    pub fd_step: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { residual_tol: 1e-12, max_iters: 50, fd_step: 1e-7 }
    }
}

impl NewtonConfig {
    pub fn with_tol(residual_tol: f64) -> Self {
        Self { residual_tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) || self.max_iters < 1 || !(self.fd_step > 0.0) {
            return Err(Error::InvalidArgument(format!("bad newton config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub x: Vector,
    pub iterations: usize,
    pub residual: f64,
}

/// Infinity norm of a matrix (max absolute row sum).
pub fn norm_inf(a: &Mat) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Max-abs norm of a vector.
pub fn vec_inf(v: &Vector) -> f64 {
    v.amax()
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn lu_solve(a: &Mat, b: &Vector) -> Result<Vector> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n || b.len() != n {
        return Err(Error::InvalidArgument(format!(
            "lu_solve: A is {}x{}, b has {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let threshold = PIVOT_TOL * norm_inf(a);
    let lu = a.clone().lu();
    let u = lu.u();
    let pivot = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(pivot > threshold) {
        return Err(Error::SingularMatrix { pivot, threshold });
    }
    lu.solve(b).ok_or(Error::SingularMatrix { pivot, threshold })
}

/// Solves `A X = B` column by column with one factorization.
pub fn lu_solve_mat(a: &Mat, b: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n || b.nrows() != n {
        return Err(Error::InvalidArgument("lu_solve_mat: dimension mismatch".into()));
    }
    let threshold = PIVOT_TOL * norm_inf(a);
    let lu = a.clone().lu();
    let pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(pivot > threshold) {
        return Err(Error::SingularMatrix { pivot, threshold });
    }
    lu.solve(b).ok_or(Error::SingularMatrix { pivot, threshold })
}

/// Forward-difference Jacobian of `f` at `x`, given `fx = f(x)`.
pub fn fd_jacobian<F>(f: &F, x: &Vector, fx: &Vector, step: f64) -> Mat
where
    F: Fn(&Vector) -> Vector,
{
    let n = x.len();
    let mut jac = Mat::zeros(fx.len(), n);
    let mut xp = x.clone();
    for j in 0..n {
        let dj = step * x[j].abs().max(1.0);
        xp[j] = x[j] + dj;
        let fp = f(&xp);
        xp[j] = x[j];
        jac.set_column(j, &((fp - fx) / dj));
    }
    jac
}

/// Damped Newton with a finite-difference Jacobian.
pub fn newton_solve<F>(residual: F, x0: &Vector, cfg: &NewtonConfig) -> Result<NewtonSolution>
where
    F: Fn(&Vector) -> Vector,
{
    let step = cfg.fd_step;
    newton_solve_with_jacobian(&residual, |x: &Vector, fx: &Vector| fd_jacobian(&residual, x, fx, step), x0, cfg)
}

/// Damped Newton with a caller-supplied Jacobian `jac(x, f(x))`.
pub fn newton_solve_with_jacobian<F, J>(
    residual: F,
    jac: J,
    x0: &Vector,
    cfg: &NewtonConfig,
) -> Result<NewtonSolution>
where
    F: Fn(&Vector) -> Vector,
    J: Fn(&Vector, &Vector) -> Mat,
{
    cfg.validate()?;
    let mut x = x0.clone();
    let mut fx = residual(&x);
    let mut norm = vec_inf(&fx);
    let mut iterations = 0;
    loop {
        if !norm.is_finite() {
            return Err(Error::NoConvergence { iterations, residual: norm });
        }
        if norm <= cfg.residual_tol {
            return Ok(NewtonSolution { x, iterations, residual: norm });
        }
        if iterations >= cfg.max_iters {
            return Err(Error::NoConvergence { iterations, residual: norm });
        }
        let j = jac(&x, &fx);
        let dx = lu_solve(&j, &(-&fx))?;
        iterations += 1;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let xt = &x + &dx * t;
            let ft = residual(&xt);
            let nt = vec_inf(&ft);
            if nt < norm {
                accepted = Some((xt, ft, nt));
                break;
            }
            t *= 0.5;
        }
        // No decrease along the direction: take the full step and let the
        // iteration cap decide.
        let (xn, fnew, nn) = accepted.unwrap_or_else(|| {
            let xt = &x + &dx;
            let ft = residual(&xt);
            let nt = vec_inf(&ft);
            (xt, ft, nt)
        });
        x = xn;
        fx = fnew;
        norm = nn;
    }
}
