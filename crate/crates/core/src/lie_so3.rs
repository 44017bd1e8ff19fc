//! SO(3) and its Lie algebra in the vector representation.
//!
//! Tangent maps are right-trivialized: for a retraction `tau`,
//! `D tau(xi)[delta] = hat(dtau(xi) * delta) * tau(xi)`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type AlgebraVec = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `R^T R = I` and `det R = 1`.
pub const GROUP_TOL: f64 = 1e-10;

/// Tolerance on `S + S^T` accepted by [`vee`].
pub const SKEW_TOL: f64 = 1e-10;

const SMALL_ANGLE: f64 = 1e-8;

/// A rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupElem(Mat3);

impl GroupElem {
    pub fn identity() -> Self {
        GroupElem(Mat3::identity())
    }

    /// Wraps `r` after checking orthonormality and orientation.
    pub fn new(r: Mat3) -> Result<Self> {
        let g = GroupElem(r);
        let d = g.defect();
        if d > GROUP_TOL {
            return Err(Error::InvalidArgument(format!("not a rotation (defect {d:.3e})")));
        }
        Ok(g)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// Largest of `|R^T R - I|_max` and `|det R - 1|`.
    pub fn defect(&self) -> f64 {
        let orth = (self.0.transpose() * self.0 - Mat3::identity()).amax();
        orth.max((self.0.determinant() - 1.0).abs())
    }

    pub fn inverse(&self) -> Self {
        GroupElem(self.0.transpose())
    }
}

impl std::ops::Mul for GroupElem {
    type Output = GroupElem;
    fn mul(self, rhs: GroupElem) -> GroupElem {
        GroupElem(self.0 * rhs.0)
    }
}

pub fn hat(v: &AlgebraVec) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(s: &Mat3) -> Result<AlgebraVec> {
    let asym = (s + s.transpose()).norm();
    if asym > SKEW_TOL {
        return Err(Error::NotSkew(asym));
    }
    Ok(AlgebraVec::new(s[(2, 1)], s[(0, 2)], s[(1, 0)]))
}

/// Cayley map `I + 4/(4+|w|^2) (W + W^2/2)`.
pub fn cay(w: &AlgebraVec) -> GroupElem {
    let h = hat(w);
    let c = 4.0 / (4.0 + w.norm_squared());
    GroupElem(Mat3::identity() + (h + h * h * 0.5) * c)
}

pub fn dcay(w: &AlgebraVec) -> Mat3 {
    (Mat3::identity() * 2.0 + hat(w)) * (2.0 / (4.0 + w.norm_squared()))
}

pub fn dcay_inv(w: &AlgebraVec) -> Mat3 {
    Mat3::identity() - hat(w) * 0.5 + w * w.transpose() * 0.25
}

/// Rodrigues formula.
pub fn exp_so3(w: &AlgebraVec) -> GroupElem {
    let t2 = w.norm_squared();
    let t = t2.sqrt();
    let h = hat(w);
    let (a, b) = if t < SMALL_ANGLE {
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (t.sin() / t, (1.0 - t.cos()) / t2)
    };
    GroupElem(Mat3::identity() + h * a + h * h * b)
}

/// Closed form of the right-trivialized tangent of `exp`.
pub fn dexp(w: &AlgebraVec) -> Mat3 {
    let t2 = w.norm_squared();
    let t = t2.sqrt();
    let h = hat(w);
    let (a, b) = if t < SMALL_ANGLE {
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        ((1.0 - t.cos()) / t2, (t - t.sin()) / (t2 * t))
    };
    Mat3::identity() + h * a + h * h * b
}

/// Closed-form inverse of [`dexp`], valid for `|w| < 2 pi`.
pub fn dexp_inv_exact(w: &AlgebraVec) -> Mat3 {
    let t2 = w.norm_squared();
    let t = t2.sqrt();
    let h = hat(w);
    let c = if t < SMALL_ANGLE {
        1.0 / 12.0 + t2 / 720.0
    } else {
        let half = 0.5 * t;
        (1.0 - half / half.tan()) / t2
    };
    Mat3::identity() - h * 0.5 + h * h * c
}

/// Bernoulli numbers `B_0..` with the `B_1 = -1/2` convention.
fn bernoulli(j: usize) -> f64 {
    // Recurrence sum_{k<=m} C(m+1,k) B_k = 0.
    let mut b = vec![1.0f64];
    for m in 1..=j {
        let mut s = 0.0;
        let mut binom = 1.0;
        for (k, bk) in b.iter().enumerate() {
            s += binom * bk;
            binom = binom * (m + 1 - k) as f64 / (k + 1) as f64;
        }
        b.push(-s / (m + 1) as f64);
    }
    b[j]
}

/// Truncated series `sum_{j<=order} B_j/j! ad_w^j`.
pub fn dexp_inv(w: &AlgebraVec, order: usize) -> Mat3 {
    let ad = hat(w);
    let mut term = Mat3::identity();
    let mut out = Mat3::identity();
    let mut fact = 1.0;
    for j in 1..=order {
        term *= ad;
        fact *= j as f64;
        let bj = bernoulli(j);
        if bj != 0.0 {
            out += term * (bj / fact);
        }
    }
    out
}

/// Default truncation order for [`dexp_inv`].
pub const DEXP_INV_ORDER: usize = 4;

#[allow(non_snake_case)]
pub fn Ad(g: &GroupElem, xi: &AlgebraVec) -> AlgebraVec {
    g.0 * xi
}

#[allow(non_snake_case)]
pub fn Ad_star(g: &GroupElem, m: &AlgebraVec) -> AlgebraVec {
    g.0.transpose() * m
}

/// A local diffeomorphism from the algebra to the group with
/// `tau(0) = e` and `tau(xi) tau(-xi) = e`.
pub trait Retraction: Send + Sync + std::fmt::Debug {
    fn tau(&self, xi: &AlgebraVec) -> GroupElem;
    fn dtau(&self, xi: &AlgebraVec) -> Mat3;
    fn dtau_inv(&self, xi: &AlgebraVec) -> Mat3;
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Cayley;

#[derive(Debug, Clone, Copy, Default)]
pub struct Exponential;

impl Retraction for Cayley {
    fn tau(&self, xi: &AlgebraVec) -> GroupElem {
        cay(xi)
    }
    fn dtau(&self, xi: &AlgebraVec) -> Mat3 {
        dcay(xi)
    }
    fn dtau_inv(&self, xi: &AlgebraVec) -> Mat3 {
        dcay_inv(xi)
    }
    fn name(&self) -> &'static str {
        "cayley"
    }
}

impl Retraction for Exponential {
    fn tau(&self, xi: &AlgebraVec) -> GroupElem {
        exp_so3(xi)
    }
    fn dtau(&self, xi: &AlgebraVec) -> Mat3 {
        dexp(xi)
    }
    fn dtau_inv(&self, xi: &AlgebraVec) -> Mat3 {
        dexp_inv_exact(xi)
    }
    fn name(&self) -> &'static str {
        "exp"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn v(a: f64, b: f64, c: f64) -> AlgebraVec {
        AlgebraVec::new(a, b, c)
    }

    #[test]
    fn hat_examples() {
        assert_eq!(hat(&v(0.0, 0.0, 0.0)), Mat3::zeros());
        assert_eq!(hat(&v(0.0, 0.0, 1.0)), Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(hat(&v(1.0, 0.0, 0.0)) * v(0.0, 1.0, 0.0), v(0.0, 0.0, 1.0));
    }

    #[test]
    fn vee_examples() {
        assert_eq!(vee(&Mat3::zeros()).unwrap(), v(0.0, 0.0, 0.0));
        assert_eq!(vee(&hat(&v(1.0, 2.0, 3.0))).unwrap(), v(1.0, 2.0, 3.0));
        assert_eq!(vee(&hat(&v(-0.2, 0.0, 0.4))).unwrap(), v(-0.2, 0.0, 0.4));
        assert!(matches!(vee(&Mat3::identity()), Err(Error::NotSkew(_))));
    }

    #[test]
    fn cay_examples() {
        assert_eq!(*cay(&v(0.0, 0.0, 0.0)).matrix(), Mat3::identity());
        // c = 4/8, W^2 = diag(0,-4,-4): I + W/2 + diag(0,-1,-1)
        let r = cay(&v(2.0, 0.0, 0.0));
        let expect = Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((r.matrix() - expect).amax() < 1e-15);
        assert!(cay(&v(0.3, -0.2, 0.5)).defect() < 1e-12);
    }

    #[test]
    fn dcay_examples() {
        assert_eq!(dcay(&AlgebraVec::zeros()), Mat3::identity());
        assert_eq!(dcay_inv(&AlgebraVec::zeros()), Mat3::identity());
        // I - W/2 + diag(1,0,0) with W = hat((2,0,0))
        let expect = Mat3::new(2.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, -1.0, 1.0);
        assert!((dcay_inv(&v(2.0, 0.0, 0.0)) - expect).amax() < 1e-15);
        let p = dcay(&v(2.0, 0.0, 0.0)) * dcay_inv(&v(2.0, 0.0, 0.0));
        assert!((p - Mat3::identity()).amax() < 1e-14);
    }

    #[test]
    fn exp_examples() {
        assert_eq!(*exp_so3(&AlgebraVec::zeros()).matrix(), Mat3::identity());
        let r = exp_so3(&v(PI, 0.0, 0.0));
        assert!((r.matrix() - Mat3::from_diagonal(&v(1.0, -1.0, -1.0))).amax() < 1e-15);
        assert_eq!(dexp_inv(&AlgebraVec::zeros(), 1), Mat3::identity());
        assert_eq!(dexp_inv(&AlgebraVec::zeros(), 7), Mat3::identity());
    }

    #[test]
    fn bernoulli_numbers() {
        let expect = [1.0, -0.5, 1.0 / 6.0, 0.0, -1.0 / 30.0, 0.0, 1.0 / 42.0];
        for (j, b) in expect.iter().enumerate() {
            assert!((bernoulli(j) - b).abs() < 1e-15, "B_{j}");
        }
    }

    #[test]
    fn dexp_inv_series_tends_to_closed_form() {
        let w = v(0.3, -0.1, 0.2);
        let exact = dexp_inv_exact(&w);
        let e4 = (dexp_inv(&w, 4) - exact).amax();
        let e8 = (dexp_inv(&w, 8) - exact).amax();
        assert!(e4 < 1e-4 && e8 < e4 * 1e-2);
        assert!((dexp(&w) * exact - Mat3::identity()).amax() < 1e-14);
    }

    #[test]
    fn ad_examples() {
        let xi = v(0.1, 0.2, -0.3);
        assert_eq!(Ad(&GroupElem::identity(), &xi), xi);
        let w = v(0.4, -1.0, 0.7);
        assert!((Ad(&cay(&w), &w) - w).amax() < 1e-15);
    }

    #[test]
    fn group_elem_checks() {
        assert!(GroupElem::new(Mat3::identity() * 2.0).is_err());
        assert!(GroupElem::new(-Mat3::identity()).is_err());
        assert!(GroupElem::new(*cay(&v(1.0, 2.0, 3.0)).matrix()).is_ok());
    }

    fn small_vec() -> impl Strategy<Value = AlgebraVec> {
        (-1.1f64..1.1, -1.1f64..1.1, -1.1f64..1.1).prop_map(|(a, b, c)| v(a, b, c))
    }

    proptest! {
        #[test]
        fn hat_is_cross_product(a in small_vec(), b in small_vec()) {
            prop_assert!((hat(&a) * b - a.cross(&b)).amax() < 1e-15);
            prop_assert_eq!(vee(&hat(&a)).unwrap(), a);
        }

        #[test]
        fn retractions_invert_under_negation(a in small_vec()) {
            prop_assert!(((cay(&a) * cay(&-a)).matrix() - Mat3::identity()).amax() < 1e-12);
            prop_assert!(((exp_so3(&a) * exp_so3(&-a)).matrix() - Mat3::identity()).amax() < 1e-12);
        }

        #[test]
        fn ad_star_is_dual(a in small_vec(), m in small_vec(), xi in small_vec()) {
            let g = exp_so3(&a);
            prop_assert!((Ad_star(&g, &m).dot(&xi) - m.dot(&Ad(&g, &xi))).abs() < 1e-14);
        }
    }
}
