//! Built-in flat test systems.

use std::sync::Arc;

use nalgebra::dvector;

use super::FlatSystem;
use crate::numerics::{Mat, Vector};

/// Particle in R^3 with `zdot = y xdot`, i.e. `mu(q) = (y, 0, -1)`, unit mass.
///
/// With `harmonic` the potential is `(x^2 + y^2)/2`. A nonzero `affine_rate`
/// `a` adds the drift `Y = a(-y, x, 0)`. This is a standard textbook
/// example, not one of the benchmark systems.
pub fn nonholonomic_particle(harmonic: bool, affine_rate: f64) -> FlatSystem {
    let mut sys = FlatSystem::new(
        "nonholonomic_particle",
        Mat::identity(3, 3),
        1,
        Arc::new(|q: &Vector| Mat::from_row_slice(1, 3, &[q[1], 0.0, -1.0])),
    )
    .expect("identity mass");
    if harmonic {
        sys = sys.with_potential(
            Arc::new(|q: &Vector| 0.5 * (q[0] * q[0] + q[1] * q[1])),
            Arc::new(|q: &Vector| dvector![q[0], q[1], 0.0]),
        );
    }
    if affine_rate != 0.0 {
        let a = affine_rate;
        sys = sys.with_affine(Arc::new(move |q: &Vector| dvector![-a * q[1], a * q[0], 0.0]));
    }
    sys
}

/// Two degrees of freedom, `M = diag(1, 2)`, anharmonic potential
/// `(q1^2 + q2^2)/2 + q1^4/4`, constant constraint row `(1, 1)`. A nonzero
/// `affine_rate` `a` adds `Y = -a (q1 + q2)/2 (1, 1)`, which relaxes
/// `q1 + q2` to zero at rate `a`.
pub fn constrained_2d(affine_rate: f64) -> FlatSystem {
    let mut sys = FlatSystem::new(
        "constrained_2d",
        Mat::from_diagonal(&dvector![1.0, 2.0]),
        1,
        Arc::new(|_: &Vector| Mat::from_row_slice(1, 2, &[1.0, 1.0])),
    )
    .expect("diagonal mass")
    .with_potential(
        Arc::new(|q: &Vector| 0.5 * (q[0] * q[0] + q[1] * q[1]) + 0.25 * q[0].powi(4)),
        Arc::new(|q: &Vector| dvector![q[0] + q[0].powi(3), q[1]]),
    );
    if affine_rate != 0.0 {
        let a = affine_rate;
        sys = sys.with_affine(Arc::new(move |q: &Vector| {
            let c = -0.5 * a * (q[0] + q[1]);
            dvector![c, c]
        }));
    }
    sys
}

/// `n = 1`, `M = 1`, `V = q^2/2`, no constraints.
pub fn harmonic_oscillator() -> FlatSystem {
    FlatSystem::unconstrained("harmonic_oscillator", Mat::identity(1, 1))
        .expect("unit mass")
        .with_potential(Arc::new(|q: &Vector| 0.5 * q[0] * q[0]), Arc::new(|q: &Vector| q.clone()))
}

/// Unit-mass free particle in R^n.
pub fn free_particle(n: usize) -> FlatSystem {
    FlatSystem::unconstrained("free_particle", Mat::identity(n, n)).expect("unit mass")
}
