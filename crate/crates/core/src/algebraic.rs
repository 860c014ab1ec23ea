//! Closed-form reconstruction of the rotor angle and internal voltage from
//! terminal measurements.
//!
//! Rewriting the stator equation with the measured terminal phasors gives
//! `((x_q − x'_d)·I_d + x3)·e^{j·x1} = (R_s + j·x_q)·I_t·e^{j·φ_t} + V_t·e^{j·θ_t} = ψ`,
//! so `x1 = arg ψ` and `x3 = |ψ| − (x_q − x'_d)·cos(π/2 − x1 + φ_t)·I_t`.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use crate::error::{DseError, Result};
use crate::machine::{air_gap_torque, SgParams};
use crate::network::TerminalMeasurement;
use crate::phasor::{dq_decompose, Phasor};
use crate::timeseries::unwrap_angles;

/// Below this magnitude the argument of ψ is considered undefined.
pub const DEFAULT_PSI_FLOOR: f64 = 1e-9;

/// Per-sample output of the algebraic observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgebraicEstimate {
    pub t: f64,
    /// Rotor angle. Principal value from [`observe_x1_x3`]; continuous
    /// (unwrapped) in the output of [`estimate_series`].
    pub x1_hat: f64,
    pub x3_hat: f64,
    pub te_hat: f64,
    pub itd: f64,
    pub itq: f64,
}

/// `ψ = (R_s + j·x_q)·y3·e^{j·y4} + y1·e^{j·y2}`.
pub fn psi_phasor(y: &TerminalMeasurement, p: &SgParams) -> Phasor {
    let i = Complex64::from_polar(y.y3, y.y4);
    let v = Complex64::from_polar(y.y1, y.y2);
    Phasor(Complex64::new(p.rs, p.xq) * i + v)
}

/// Rotor angle (principal value) and internal voltage for one sample.
pub fn observe_x1_x3(y: &TerminalMeasurement, p: &SgParams) -> Result<(f64, f64)> {
    observe_x1_x3_with_floor(y, p, DEFAULT_PSI_FLOOR)
}

pub fn observe_x1_x3_with_floor(y: &TerminalMeasurement, p: &SgParams, floor: f64) -> Result<(f64, f64)> {
    let psi = psi_phasor(y, p);
    let magnitude = psi.magnitude();
    if !(magnitude > floor) {
        return Err(DseError::DegeneratePhasor { magnitude, floor });
    }
    let x1 = psi.angle();
    let x3 = magnitude - (p.xq - p.xdp) * (FRAC_PI_2 - x1 + y.y4).cos() * y.y3;
    Ok((x1, x3))
}

/// Runs the algebraic observer over a series, unwraps the rotor angle and
/// derives the dq currents and the air-gap torque per sample.
pub fn estimate_series(y: &[TerminalMeasurement], p: &SgParams) -> Result<Vec<AlgebraicEstimate>> {
    if y.is_empty() {
        return Err(DseError::TooShort { need: 1, got: 0 });
    }
    let raw: Vec<(f64, f64)> = y
        .iter()
        .enumerate()
        .map(|(k, s)| observe_x1_x3(s, p).map_err(|e| e.at(k)))
        .collect::<Result<_>>()?;
    let x1: Vec<f64> = unwrap_angles(&raw.iter().map(|r| r.0).collect::<Vec<_>>());
    Ok(y.iter()
        .zip(raw)
        .zip(x1)
        .map(|((s, (_, x3)), x1)| {
            let (itd, itq) = dq_decompose(s.y3, s.y4, x1);
            AlgebraicEstimate {
                t: s.t,
                x1_hat: x1,
                x3_hat: x3,
                te_hat: air_gap_torque(x3, itd, itq, p),
                itd,
                itq,
            }
        })
        .collect())
}
