//! Geometric nonholonomic integrators.
//!
//! Flat schemes (Euler A/B extensions, nonholonomic RATTLE, affine
//! variants and the generic projected scheme) live in [`gni_flat`]; reduced
//! schemes on `R^n x so(3)`, including the Chaplygin sphere, in
//! [`gni_reduced`]. [`analysis`] runs trajectories and convergence sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod gni_flat;
pub mod gni_reduced;
pub mod lie_so3;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
