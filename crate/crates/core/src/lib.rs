//! Adiabatic shear band formation in a thermoviscoplastic material: uniform
//! shear, its linear stability, self-similar localizing profiles and a
//! finite-difference simulator for the full nonlinear system.

// `!(x > 0.0)` is used on purpose so that NaN fails validation; index loops
// mirror the numerical formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod interp;
pub mod localization;
pub mod linear_stability;
pub mod model;
pub mod ode;
pub mod orbit;
pub mod pde_sim;
pub mod profile;
pub mod stiff;

pub use error::{Error, Result};
pub use model::{MaterialParams, ScalingParams, UniformShearState};
