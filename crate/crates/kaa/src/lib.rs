//! Asymptotic action-angle coordinates for the repulsive Kepler problem and a
//! mean-field particle simulator for a plasma gas interacting with a moving
//! point charge.
//!
//! The library is organised around the exact scattering structure of the
//! repulsive two-body problem `x'' = (q/2) x/|x|^3`:
//!
//! * [`kepler`] — transforms between physical phase space `(x, v)`,
//!   angle-action coordinates `(theta, a)` in which the flow is the straight
//!   line `theta + t a`, and a redundant "super-integrable" chart
//!   `(xi, eta, lambda, u, L)` in which only `eta` evolves.
//! * [`special`] — the scalar special functions and the implicit root solve
//!   shared by the coordinate maps.
//! * [`brackets`] — finite-difference Poisson brackets used to verify the
//!   canonical structure numerically.
//! * [`field`] — softened electric potential/field/gradient of a weighted
//!   particle ensemble, scale decomposition, and the free-streaming effective
//!   field with its late-time profile estimator.
//! * [`sim`] — Strang splitting integrator (exact Kepler drift + frozen-field
//!   kick) in the charge-centered frame, with conservation and scattering
//!   diagnostics.
//! * [`verify`] — an independent adaptive Runge-Kutta oracle and the
//!   property-test suites, reporting machine-readable results.

pub mod brackets;
pub mod error;
pub mod field;
pub mod kepler;
pub mod sim;
pub mod special;
pub mod verify;

pub use error::{Error, Result};

/// 3-vector of `f64`, the coordinate type used throughout.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Modified Japanese bracket `<s> = sqrt(4 + s^2)`, the weight used by the
/// moment diagnostics and the bulk-region test.
pub fn jbracket(s: f64) -> f64 {
    (4.0 + s * s).sqrt()
}
