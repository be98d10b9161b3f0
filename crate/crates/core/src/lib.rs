//! Feedback control and turnpike diagnostics for Cucker–Smale alignment
//! dynamics at three levels: the particle system, its empirical (mean-field)
//! measures, and two hydrodynamic closures.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the double-precision types the experiments use.

// Negated comparisons are deliberate: NaN inputs must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hydro;
pub mod kernel;
pub mod meanfield;
pub mod particle;
pub mod scalar;
pub mod turnpike;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type KernelSpec64 = kernel::KernelSpec<f64>;
pub type ParticleState64 = particle::ParticleState<f64>;
pub type ControlLaw64 = particle::ControlLaw<f64>;
pub type CostSeries64 = turnpike::CostSeries<f64>;
pub type DecayReport64 = turnpike::DecayReport<f64>;
pub type Grid64 = hydro::Grid1D<f64>;
pub type PressurelessState64 = hydro::pressureless::PressurelessState<f64>;
pub type EulerState64 = hydro::euler::EulerState<f64>;
