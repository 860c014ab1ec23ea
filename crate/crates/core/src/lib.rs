//! Dynamic state and parameter estimation of a synchronous generator from
//! substation phasor measurements.
//!
//! The pipeline maps PMU phasors to the generator terminal ([`network`]),
//! reconstructs rotor angle and internal voltage in closed form
//! ([`algebraic`]), identifies inertia and damping with a regressor
//! extension and mixing estimator ([`drem`]), tracks the speed deviation
//! with an immersion-and-invariance observer ([`observer`]) and scores the
//! result by re-simulation ([`validation`]). [`sim`] generates synthetic
//! measurement data with known ground truth.

// `!(x > 0.0)` is used on purpose so that NaN fails parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebraic;
pub mod config;
pub mod csv_io;
pub mod drem;
pub mod error;
pub mod machine;
pub mod network;
pub mod observer;
pub mod phasor;
pub mod pipeline;
pub mod sim;
pub mod timeseries;
pub mod validation;

pub use error::{DseError, Result};
