//! Concrete problem instances: a decoupled quadratic toy, the cognitive
//! multi-access channel power-control problem, and the two-timescale hybrid
//! beamforming problem, plus the shared random-variate helpers their state
//! samplers use.

mod cmac;
mod thp;
mod toy;

pub use cmac::{
    cmac_problem, dual_ellipsoid_baseline, short_term_constraint_baseline, CmacInstance,
    EllipsoidOutcome,
};
pub use thp::{thp_problem, thp_rates, ThpInstance, ThpProblem};
pub use toy::ToyProblem;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Exp(1) variate by inversion.
pub fn exponential(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln()
}

/// Standard normal pair via Box–Muller.
pub fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let r = (-2.0 * (1.0 - u1).ln()).sqrt();
    let ang = 2.0 * std::f64::consts::PI * u2;
    (r * ang.cos(), r * ang.sin())
}
