//! Third-order flux-decay synchronous generator model.
//!
//! State `x = [δ, ω − ω_s, E'_q]`. With `a1 = ω_s·D/(2H)` and
//! `a2 = ω_s/(2H)` the dynamics read
//!
//! ```text
//! ẋ1 = x2
//! ẋ2 = −a1·x2 + a2·(T_m − T_e)
//! ẋ3 = (−x3 − (x_d − x'_d)·I_td + E_f) / T'_d0
//! ```
//!
//! The stator algebra ties the internal voltage to the terminal phasors:
//! `V_d = x_q·I_q − R_s·I_d`, `V_q = x3 − R_s·I_q − x'_d·I_d`, with the
//! terminal current written `(I_d + jI_q)·e^{j(x1 − π/2)}`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};
use crate::timeseries::derivative;

/// Machine constants. Reactances and resistance in per unit, time constants
/// in seconds, `omega_s` in rad/s, `d` in pu torque per rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgParams {
    /// Inertia constant H (s).
    #[serde(rename = "H")]
    pub h: f64,
    /// Damping factor D.
    #[serde(rename = "D")]
    pub d: f64,
    pub omega_s: f64,
    /// Direct-axis transient open-circuit time constant T'_d0 (s).
    pub td0p: f64,
    pub xd: f64,
    /// Direct-axis transient reactance x'_d.
    pub xdp: f64,
    pub xq: f64,
    pub rs: f64,
}

impl Default for SgParams {
    fn default() -> Self {
        Self {
            h: 6.18,
            d: 0.04,
            omega_s: 100.0 * std::f64::consts::PI,
            td0p: 8.0,
            xd: 1.8,
            xdp: 0.3,
            xq: 1.7,
            rs: 0.003,
        }
    }
}

impl SgParams {
    pub fn a1(&self) -> f64 {
        self.omega_s * self.d / (2.0 * self.h)
    }

    pub fn a2(&self) -> f64 {
        self.omega_s / (2.0 * self.h)
    }

    /// Same machine with (H, D) replaced by the values implied by
    /// `theta = [a1, a2]`: `H = ω_s/(2·a2)`, `D = a1/a2`.
    pub fn with_theta(&self, theta: [f64; 2]) -> Self {
        Self {
            h: self.omega_s / (2.0 * theta[1]),
            d: theta[0] / theta[1],
            ..*self
        }
    }

    fn stator_den(&self) -> Result<f64> {
        let den = self.rs * self.rs + self.xdp * self.xq;
        if den == 0.0 || !den.is_finite() {
            return Err(DseError::DegenerateParameters("R_s² + x'_d·x_q must be nonzero".into()));
        }
        Ok(den)
    }

    /// Every invariant violation, prefixed with `prefix` as key path.
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, key: &str, why: &str| {
            if !ok {
                v.push(format!("{prefix}.{key}: {why}"));
            }
        };
        check(self.h > 0.0 && self.h.is_finite(), "H", "must be > 0");
        check(self.d >= 0.0 && self.d.is_finite(), "D", "must be >= 0");
        check(self.omega_s > 0.0 && self.omega_s.is_finite(), "omega_s", "must be > 0");
        check(self.td0p > 0.0 && self.td0p.is_finite(), "td0p", "must be > 0");
        check(self.xdp > 0.0 && self.xdp.is_finite(), "xdp", "must be > 0");
        check(self.xd >= self.xdp && self.xd.is_finite(), "xd", "must be >= xdp");
        check(self.xq > 0.0 && self.xq.is_finite(), "xq", "must be > 0");
        check(self.rs >= 0.0 && self.rs.is_finite(), "rs", "must be >= 0");
        v
    }
}

/// Rotor angle δ (rad), speed deviation ω − ω_s (rad/s) and E'_q (pu).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SgState {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl SgState {
    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }
}

/// dq stator currents and their magnitude from the internal voltage and
/// the dq terminal voltage.
///
/// Solves the stator algebra for the currents:
/// `I_td = (x_q·x3 − x_q·V_tq − R_s·V_td)/(R_s² + x'_d·x_q)`,
/// `I_tq = (R_s·x3 − R_s·V_tq + x'_d·V_td)/(R_s² + x'_d·x_q)`.
pub fn stator_currents(x3: f64, vtd: f64, vtq: f64, p: &SgParams) -> Result<(f64, f64, f64)> {
    let den = p.stator_den()?;
    let itd = (p.xq * x3 - p.xq * vtq - p.rs * vtd) / den;
    let itq = (p.rs * x3 - p.rs * vtq + p.xdp * vtd) / den;
    Ok((itd, itq, itd.hypot(itq)))
}

/// Terminal active and reactive power in closed form.
pub fn terminal_powers(x3: f64, vtd: f64, vtq: f64, p: &SgParams) -> Result<(f64, f64)> {
    let den = p.stator_den()?;
    let pt = (x3 * (p.xq * vtd + p.rs * vtq) + vtd * vtq * (p.xdp - p.xq) - p.rs * (vtd * vtd + vtq * vtq)) / den;
    let qt = (x3 * (p.xq * vtq - p.rs * vtd) - p.xdp * vtd * vtd - p.xq * vtq * vtq) / den;
    Ok((pt, qt))
}

/// Electrical air-gap torque `T_e = (x_q − x'_d)·I_d·I_q + x3·I_d`.
pub fn air_gap_torque(x3: f64, id: f64, iq: f64, p: &SgParams) -> f64 {
    (p.xq - p.xdp) * id * iq + x3 * id
}

/// Right-hand side of the flux-decay model.
pub fn flux_decay_rhs(x: &SgState, tm: f64, te: f64, itd: f64, ef: f64, p: &SgParams) -> SgState {
    SgState {
        x1: x.x2,
        x2: -p.a1() * x.x2 + p.a2() * (tm - te),
        x3: (-x.x3 - (p.xd - p.xdp) * itd + ef) / p.td0p,
    }
}

/// Speed-droop governor with a first-order servo lag cascaded into a
/// first-order turbine lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GovernorTurbineParams {
    /// pu torque per pu speed.
    pub droop_gain: f64,
    pub servo_tc: f64,
    pub turbine_tc: f64,
    /// Torque reference (pu).
    pub t_ref: f64,
}

impl Default for GovernorTurbineParams {
    fn default() -> Self {
        Self {
            droop_gain: 20.0,
            servo_tc: 0.2,
            turbine_tc: 0.5,
            t_ref: 0.9,
        }
    }
}

impl GovernorTurbineParams {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.droop_gain >= 0.0 && self.droop_gain.is_finite()) {
            v.push(format!("{prefix}.droop_gain: must be >= 0"));
        }
        if !(self.servo_tc > 0.0 && self.servo_tc.is_finite()) {
            v.push(format!("{prefix}.servo_tc: must be > 0"));
        }
        if !(self.turbine_tc > 0.0 && self.turbine_tc.is_finite()) {
            v.push(format!("{prefix}.turbine_tc: must be > 0"));
        }
        if !self.t_ref.is_finite() {
            v.push(format!("{prefix}.t_ref: must be finite"));
        }
        v
    }

    /// Time derivative of the governor/turbine states.
    pub fn derivatives(&self, s: &GovernorTurbineState, x2: f64, omega_s: f64) -> GovernorTurbineState {
        let setpoint = self.t_ref - self.droop_gain * (x2 / omega_s);
        GovernorTurbineState {
            servo_out: (setpoint - s.servo_out) / self.servo_tc,
            turbine_out: (s.servo_out - s.turbine_out) / self.turbine_tc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GovernorTurbineState {
    pub servo_out: f64,
    /// Mechanical torque T_m.
    pub turbine_out: f64,
}

impl GovernorTurbineState {
    pub fn steady(t_ref: f64) -> Self {
        Self {
            servo_out: t_ref,
            turbine_out: t_ref,
        }
    }
}

/// One classic RK4 step of the governor/turbine with `x2` held constant.
/// Returns the new state and the mechanical torque at the end of the step.
pub fn governor_turbine_step(
    s: &GovernorTurbineState,
    x2: f64,
    p: &GovernorTurbineParams,
    omega_s: f64,
    dt: f64,
) -> Result<(GovernorTurbineState, f64)> {
    if !(dt > 0.0) {
        return Err(DseError::InvalidArgument("dt must be > 0".into()));
    }
    let f = |s: &GovernorTurbineState| p.derivatives(s, x2, omega_s);
    let add = |s: &GovernorTurbineState, k: &GovernorTurbineState, h: f64| GovernorTurbineState {
        servo_out: s.servo_out + h * k.servo_out,
        turbine_out: s.turbine_out + h * k.turbine_out,
    };
    let k1 = f(s);
    let k2 = f(&add(s, &k1, 0.5 * dt));
    let k3 = f(&add(s, &k2, 0.5 * dt));
    let k4 = f(&add(s, &k3, dt));
    let next = GovernorTurbineState {
        servo_out: s.servo_out + dt / 6.0 * (k1.servo_out + 2.0 * k2.servo_out + 2.0 * k3.servo_out + k4.servo_out),
        turbine_out: s.turbine_out
            + dt / 6.0 * (k1.turbine_out + 2.0 * k2.turbine_out + 2.0 * k3.turbine_out + k4.turbine_out),
    };
    Ok((next, next.turbine_out))
}

/// Exciter voltage reconstructed from the internal-voltage trajectory:
/// `Ê_f = T'_d0·dx̂3/dt + x̂3 + (x_d − x'_d)·I_td`.
pub fn exciter_estimate(x3: &[f64], itd: &[f64], p: &SgParams, dt: f64) -> Result<Vec<f64>> {
    if x3.len() != itd.len() {
        return Err(DseError::LengthMismatch {
            left: x3.len(),
            right: itd.len(),
        });
    }
    let dx3 = derivative(x3, dt)?;
    Ok(x3
        .iter()
        .zip(itd)
        .zip(dx3)
        .map(|((&x, &i), d)| p.td0p * d + x + (p.xd - p.xdp) * i)
        .collect())
}

/// Speed deviation from the terminal frequency, neglecting the rotor-angle
/// rate contribution: `x2 = 2π·f_t − ω_s`.
pub fn x2_from_frequency(f_t: f64, omega_s: f64) -> f64 {
    TAU * f_t - omega_s
}
