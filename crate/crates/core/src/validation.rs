//! Scoring of estimation results: sMAPE, convergence time of the parameter
//! estimate, and event playback (re-simulation of the machine driven by the
//! measured terminal voltage with the identified parameters).

use std::fmt::Write as _;

use crate::error::{DseError, Result};
use crate::machine::{air_gap_torque, flux_decay_rhs, stator_currents, terminal_powers, SgParams, SgState};
use crate::network::TerminalMeasurement;
use crate::phasor::dq_decompose;
use crate::sim::rk4_step;
use crate::timeseries::unwrap_angles;

/// Default relative band for [`convergence_time`].
pub const DEFAULT_CONVERGENCE_BAND: f64 = 0.02;

/// Symmetric mean absolute percentage error (%) over `start..`. Samples
/// where both values are zero contribute 0.
pub fn smape(estimated: &[f64], measured: &[f64], start: usize) -> Result<f64> {
    if estimated.len() != measured.len() {
        return Err(DseError::LengthMismatch {
            left: estimated.len(),
            right: measured.len(),
        });
    }
    if start >= estimated.len() {
        return Err(DseError::TooShort {
            need: start + 1,
            got: estimated.len(),
        });
    }
    let m = estimated.len() - start;
    let sum: f64 = estimated[start..]
        .iter()
        .zip(&measured[start..])
        .map(|(&e, &z)| {
            let den = 0.5 * (e.abs() + z.abs());
            if den == 0.0 {
                0.0
            } else {
                (e - z).abs() / den
            }
        })
        .sum();
    Ok(100.0 * sum / m as f64)
}

/// Earliest time after which every component of θ̂ stays within
/// `band·|final|` of its final value.
pub fn convergence_time(t: &[f64], theta_hat: &[[f64; 2]], band: f64) -> Result<f64> {
    let n = theta_hat.len();
    if n == 0 || t.len() != n {
        return Err(DseError::LengthMismatch {
            left: t.len(),
            right: n,
        });
    }
    let last = theta_hat[n - 1];
    let inside = |th: &[f64; 2]| (0..2).all(|j| (th[j] - last[j]).abs() <= band * last[j].abs());
    match theta_hat.iter().rposition(|th| !inside(th)) {
        None => Ok(t[0]),
        Some(k) if k + 1 >= n - 1 => Err(DseError::NeverConverged),
        Some(k) => Ok(t[k + 1]),
    }
}

/// Simulated quantities and their errors against the measurements.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlaybackResult {
    pub t: Vec<f64>,
    pub x2_sim: Vec<f64>,
    pub it_sim: Vec<f64>,
    pub pt_sim: Vec<f64>,
    pub qt_sim: Vec<f64>,
    pub errors: PlaybackErrors,
}

/// `x̃ = x_sim − x_measured` per sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlaybackErrors {
    pub x2: Vec<f64>,
    pub it: Vec<f64>,
    pub pt: Vec<f64>,
    pub qt: Vec<f64>,
}

/// Inputs for [`event_playback`], aligned with the terminal series.
#[derive(Debug, Clone, Copy)]
pub struct PlaybackInputs<'a> {
    pub y: &'a [TerminalMeasurement],
    pub ef_hat: &'a [f64],
    pub tm: &'a [f64],
    /// Reference speed deviation to score against.
    pub x2_ref: &'a [f64],
    /// Initial rotor angle and internal voltage.
    pub x1_0: f64,
    pub x3_0: f64,
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + w * (b - a)
}

/// Re-simulates the machine with `θ = [a1, a2]` driven by the measured
/// terminal voltage, the exciter estimate and the mechanical torque.
/// Inputs are linearly interpolated between samples; `substeps` RK4 steps
/// are taken per sample interval.
pub fn event_playback(
    theta: [f64; 2],
    inputs: &PlaybackInputs<'_>,
    p: &SgParams,
    substeps: usize,
) -> Result<PlaybackResult> {
    let n = inputs.y.len();
    for len in [inputs.ef_hat.len(), inputs.tm.len(), inputs.x2_ref.len()] {
        if len != n {
            return Err(DseError::LengthMismatch { left: n, right: len });
        }
    }
    if n < 2 {
        return Err(DseError::TooShort { need: 2, got: n });
    }
    if !(theta[1] > 0.0) || !theta[0].is_finite() {
        return Err(DseError::DegenerateParameters(format!(
            "identified parameters cannot be mapped back: a1 = {}, a2 = {}",
            theta[0], theta[1]
        )));
    }
    let q = p.with_theta(theta);
    let theta_t = unwrap_angles(&inputs.y.iter().map(|m| m.y2).collect::<Vec<_>>());
    let t: Vec<f64> = inputs.y.iter().map(|m| m.t).collect();

    let mut res = PlaybackResult {
        t: t.clone(),
        ..PlaybackResult::default()
    };
    let mut x = [inputs.x1_0, inputs.x2_ref[0], inputs.x3_0];
    for k in 0..n {
        let (vd, vq) = dq_decompose(inputs.y[k].y1, theta_t[k], x[0]);
        let (_, _, it) = stator_currents(x[2], vd, vq, &q).map_err(|e| e.at(k))?;
        let (pt, qt) = terminal_powers(x[2], vd, vq, &q).map_err(|e| e.at(k))?;
        let (pm, qm) = inputs.y[k].powers();
        res.x2_sim.push(x[1]);
        res.it_sim.push(it);
        res.pt_sim.push(pt);
        res.qt_sim.push(qt);
        res.errors.x2.push(x[1] - inputs.x2_ref[k]);
        res.errors.it.push(it - inputs.y[k].y3);
        res.errors.pt.push(pt - pm);
        res.errors.qt.push(qt - qm);
        if k + 1 == n {
            break;
        }
        let span = t[k + 1] - t[k];
        let h = span / substeps as f64;
        let drive = |tau: f64| {
            let w = ((tau - t[k]) / span).clamp(0.0, 1.0);
            (
                lerp(inputs.y[k].y1, inputs.y[k + 1].y1, w),
                lerp(theta_t[k], theta_t[k + 1], w),
                lerp(inputs.ef_hat[k], inputs.ef_hat[k + 1], w),
                lerp(inputs.tm[k], inputs.tm[k + 1], w),
            )
        };
        for j in 0..substeps {
            let t0 = t[k] + j as f64 * h;
            x = rk4_step(
                |tau, x: &[f64; 3]| {
                    let (vt, th, ef, tm) = drive(tau);
                    let (vd, vq) = dq_decompose(vt, th, x[0]);
                    let (id, iq, _) = stator_currents(x[2], vd, vq, &q)?;
                    let te = air_gap_torque(x[2], id, iq, &q);
                    let s = SgState {
                        x1: x[0],
                        x2: x[1],
                        x3: x[2],
                    };
                    let dx = flux_decay_rhs(&s, tm, te, id, ef, &q);
                    Ok([dx.x1, dx.x2, dx.x3])
                },
                t0,
                &x,
                h,
            )
            .map_err(|e| e.at(k))?;
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(DseError::Instability {
                t: t[k + 1],
                what: "playback state is not finite".into(),
            });
        }
    }
    Ok(res)
}

/// Metrics reported for one validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub scenario: String,
    pub theta_hat: [f64; 2],
    /// Reference `[a1, a2]`, if known.
    pub theta_ref: Option<[f64; 2]>,
    pub a1_error_pct: Option<f64>,
    pub a2_error_pct: Option<f64>,
    /// `None` if the estimate never settled.
    pub convergence_time: Option<f64>,
    pub smape_x2_observer: f64,
    pub smape_x2_playback: f64,
    pub smape_it_playback: f64,
    pub smape_pt_playback: f64,
    pub smape_qt_playback: f64,
    pub excitation_integral: f64,
    pub excitation_deficient: bool,
    pub delta2_ref: f64,
}

impl ValidationReport {
    /// Flat `key,value` lines.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_else(|| "nan".into());
        let f = |v: f64| format!("{v:.16e}");
        let kv = vec![
            ("scenario".to_string(), self.scenario.clone()),
            ("a1_hat".into(), f(self.theta_hat[0])),
            ("a2_hat".into(), f(self.theta_hat[1])),
            ("a1_ref".into(), opt(self.theta_ref.map(|t| t[0]))),
            ("a2_ref".into(), opt(self.theta_ref.map(|t| t[1]))),
            ("a1_error_pct".into(), opt(self.a1_error_pct)),
            ("a2_error_pct".into(), opt(self.a2_error_pct)),
            ("convergence_time".into(), opt(self.convergence_time)),
            ("smape_x2_observer".into(), f(self.smape_x2_observer)),
            ("smape_x2_playback".into(), f(self.smape_x2_playback)),
            ("smape_it_playback".into(), f(self.smape_it_playback)),
            ("smape_pt_playback".into(), f(self.smape_pt_playback)),
            ("smape_qt_playback".into(), f(self.smape_qt_playback)),
            ("excitation_integral".into(), f(self.excitation_integral)),
            ("excitation_deficient".into(), self.excitation_deficient.to_string()),
            ("delta2_ref".into(), f(self.delta2_ref)),
        ];
        kv
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario: {}", self.scenario);
        let _ = writeln!(
            s,
            "  a1_hat = {:.6}   a2_hat = {:.6}",
            self.theta_hat[0], self.theta_hat[1]
        );
        if let Some(r) = self.theta_ref {
            let _ = writeln!(s, "  a1_ref = {:.6}   a2_ref = {:.6}", r[0], r[1]);
        }
        if let (Some(e1), Some(e2)) = (self.a1_error_pct, self.a2_error_pct) {
            let _ = writeln!(s, "  relative error: a1 {e1:.3} %, a2 {e2:.3} %");
        }
        match self.convergence_time {
            Some(t) => {
                let _ = writeln!(s, "  convergence time: {t:.2} s");
            }
            None => {
                let _ = writeln!(s, "  convergence time: not reached");
            }
        }
        let _ = writeln!(s, "  sMAPE observer x2: {:.4} %", self.smape_x2_observer);
        let _ = writeln!(
            s,
            "  sMAPE playback x2: {:.4} %, It: {:.4} %, Pt: {:.4} %, Qt: {:.4} %",
            self.smape_x2_playback, self.smape_it_playback, self.smape_pt_playback, self.smape_qt_playback
        );
        let _ = writeln!(
            s,
            "  excitation integral: {:.6e}{}",
            self.excitation_integral,
            if self.excitation_deficient {
                " (insufficient excitation)"
            } else {
                ""
            }
        );
        let _ = writeln!(s, "  delta2_ref: {:.6e}", self.delta2_ref);
        s
    }
}
