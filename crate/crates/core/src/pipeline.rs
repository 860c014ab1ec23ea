//! End-to-end processing of terminal measurements: algebraic observer,
//! mechanical-torque reconstruction, joint parameter estimation and speed
//! observation, event playback and scoring. The command-line tool and the
//! validation runs both go through these functions.

use serde::{Deserialize, Serialize};

use crate::algebraic::{estimate_series, AlgebraicEstimate};
use crate::config::RunConfig;
use crate::drem::{reference_excitation, DremEstimator, DremSample, EstimatorConfig};
use crate::error::{DseError, Result};
use crate::machine::{exciter_estimate, GovernorTurbineParams, GovernorTurbineState, SgParams};
use crate::network::{map_to_terminal, PmuSample, TerminalMeasurement};
use crate::observer::IiObserver;
use crate::sim::{integrate_scenario, rk4_step, SimulationOutput, TruthSample};
use crate::timeseries::{derivative, unwrap_angles, TimeSeries};
use crate::validation::{convergence_time, event_playback, smape, PlaybackInputs, PlaybackResult, ValidationReport};

/// Settings of the processing chain that are not estimator tunings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    /// Initial window (s) over which the torque reference is averaged.
    pub t_ref_window: f64,
    /// RK4 steps per sample interval when re-simulating.
    pub playback_substeps: usize,
    /// Relative band for the convergence time.
    pub convergence_band: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            t_ref_window: 5.0,
            playback_substeps: 10,
            convergence_band: 0.02,
        }
    }
}

impl PipelineSettings {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.t_ref_window > 0.0 && self.t_ref_window.is_finite()) {
            v.push(format!("{prefix}.t_ref_window: must be > 0"));
        }
        if self.playback_substeps == 0 {
            v.push(format!("{prefix}.playback_substeps: must be >= 1"));
        }
        if !(self.convergence_band > 0.0 && self.convergence_band < 1.0) {
            v.push(format!("{prefix}.convergence_band: must be in (0, 1)"));
        }
        v
    }
}

/// Sample period of a uniformly sampled terminal series.
pub fn sample_period(y: &[TerminalMeasurement]) -> Result<f64> {
    if y.len() < 3 {
        return Err(DseError::TooShort { need: 3, got: y.len() });
    }
    TimeSeries::new(y.iter().map(|m| m.t).collect(), vec![(); y.len()])?.sample_period()
}

/// Signals derived from the terminal series before estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub dt: f64,
    pub algebraic: Vec<AlgebraicEstimate>,
    /// Speed deviation from the derivative of the unwrapped rotor angle.
    pub x2_diff: Vec<f64>,
    pub t_ref: f64,
    pub tm: Vec<f64>,
    pub ef_hat: Vec<f64>,
    /// `T_m − T̂_e`.
    pub torque_gap: Vec<f64>,
}

impl Reconstruction {
    pub fn t(&self) -> Vec<f64> {
        self.algebraic.iter().map(|a| a.t).collect()
    }

    pub fn x1(&self) -> Vec<f64> {
        self.algebraic.iter().map(|a| a.x1_hat).collect()
    }
}

/// Mechanical torque of the governor/turbine driven by a sampled speed
/// deviation, linearly interpolated between samples, starting in steady
/// state at `t_ref`.
pub fn governor_response(
    x2: &[f64],
    dt: f64,
    gov: &GovernorTurbineParams,
    omega_s: f64,
    substeps: usize,
) -> Result<Vec<f64>> {
    let mut s = GovernorTurbineState::steady(gov.t_ref);
    let mut out = Vec::with_capacity(x2.len());
    if x2.is_empty() {
        return Ok(out);
    }
    out.push(s.turbine_out);
    let h = dt / substeps as f64;
    for w in x2.windows(2) {
        let mut y = [s.servo_out, s.turbine_out];
        for j in 0..substeps {
            y = rk4_step(
                |tau, y: &[f64; 2]| {
                    let x = w[0] + (w[1] - w[0]) * (tau / dt);
                    let d = gov.derivatives(
                        &GovernorTurbineState {
                            servo_out: y[0],
                            turbine_out: y[1],
                        },
                        x,
                        omega_s,
                    );
                    Ok([d.servo_out, d.turbine_out])
                },
                j as f64 * h,
                &y,
                h,
            )?;
        }
        s = GovernorTurbineState {
            servo_out: y[0],
            turbine_out: y[1],
        };
        out.push(s.turbine_out);
    }
    Ok(out)
}

/// Algebraic observer, exciter estimate and mechanical-torque
/// reconstruction. The torque reference is the mean estimated air-gap
/// torque over the initial window.
pub fn reconstruct(
    y: &[TerminalMeasurement],
    p: &SgParams,
    gov: &GovernorTurbineParams,
    settings: &PipelineSettings,
) -> Result<Reconstruction> {
    let dt = sample_period(y)?;
    let algebraic = estimate_series(y, p)?;
    let x1: Vec<f64> = algebraic.iter().map(|a| a.x1_hat).collect();
    let x2_diff = derivative(&x1, dt)?;
    let t0 = algebraic[0].t;
    let window: Vec<f64> = algebraic
        .iter()
        .take_while(|a| a.t - t0 < settings.t_ref_window)
        .map(|a| a.te_hat)
        .collect();
    let t_ref = window.iter().sum::<f64>() / window.len() as f64;
    let gov = GovernorTurbineParams { t_ref, ..*gov };
    let tm = governor_response(&x2_diff, dt, &gov, p.omega_s, 4)?;
    let x3: Vec<f64> = algebraic.iter().map(|a| a.x3_hat).collect();
    let itd: Vec<f64> = algebraic.iter().map(|a| a.itd).collect();
    let ef_hat = exciter_estimate(&x3, &itd, p, dt)?;
    let torque_gap = tm.iter().zip(&algebraic).map(|(m, a)| m - a.te_hat).collect();
    Ok(Reconstruction {
        dt,
        algebraic,
        x2_diff,
        t_ref,
        tm,
        ef_hat,
        torque_gap,
    })
}

/// `Δ²_ref` calibrated on a reference series: the mean of Δ² with the
/// estimator filters driven by the reconstructed signals.
pub fn calibrate_delta2_ref(r: &Reconstruction, cfg: &EstimatorConfig) -> Result<f64> {
    reference_excitation(&r.x1(), &r.torque_gap, cfg, r.dt)
}

/// Joint output of the parameter estimator and the speed observer.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimation {
    pub reconstruction: Reconstruction,
    pub delta2_ref: f64,
    pub drem: Vec<DremSample>,
    pub x2_hat: Vec<f64>,
    pub excitation_deficient: bool,
    pub unstable_steps: usize,
}

impl Estimation {
    pub fn theta_hat(&self) -> [f64; 2] {
        self.drem.last().map(|s| s.theta_hat).unwrap_or([f64::NAN; 2])
    }

    pub fn theta_series(&self) -> Vec<[f64; 2]> {
        self.drem.iter().map(|s| s.theta_hat).collect()
    }
}

/// Runs the estimator and the observer side by side; the observer step from
/// sample `k` to `k + 1` uses the estimate available at sample `k`.
pub fn estimate(r: Reconstruction, cfg: &EstimatorConfig, delta2_ref: f64) -> Result<Estimation> {
    let x1 = r.x1();
    let t = r.t();
    let mut drem = DremEstimator::new(cfg, delta2_ref, r.dt)?;
    let mut obs = IiObserver::new(cfg.k, x1[0], r.torque_gap[0])?;
    let mut samples = Vec::with_capacity(x1.len());
    let mut x2_hat = Vec::with_capacity(x1.len());
    for k in 0..x1.len() {
        if k > 0 {
            let theta = samples.last().map(|s: &DremSample| s.theta_hat).unwrap_or(cfg.theta0);
            obs.step(x1[k], r.torque_gap[k], theta, r.dt);
        }
        x2_hat.push(obs.state().x2_hat);
        samples.push(drem.step(t[k], x1[k], r.torque_gap[k]));
    }
    let excitation_deficient = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) if b.t > a.t => b.excitation / (b.t - a.t) < cfg.excitation_rate_floor,
        _ => true,
    };
    if excitation_deficient {
        log::warn!("insufficient excitation: the integral of delta^2 grows slower than the configured floor");
    }
    if drem.unstable_steps() > 0 {
        log::warn!(
            "{} estimator steps exceeded the Euler stability bound",
            drem.unstable_steps()
        );
    }
    Ok(Estimation {
        reconstruction: r,
        delta2_ref,
        drem: samples,
        x2_hat,
        excitation_deficient,
        unstable_steps: drem.unstable_steps(),
    })
}

/// Event playback with parameters `theta`, driven by the measured terminal
/// voltage and the reconstructed exciter voltage and mechanical torque.
pub fn playback(
    r: &Reconstruction,
    y: &[TerminalMeasurement],
    theta: [f64; 2],
    x2_ref: &[f64],
    p: &SgParams,
    settings: &PipelineSettings,
) -> Result<PlaybackResult> {
    event_playback(
        theta,
        &PlaybackInputs {
            y,
            ef_hat: &r.ef_hat,
            tm: &r.tm,
            x2_ref,
            x1_0: r.algebraic[0].x1_hat,
            x3_0: r.algebraic[0].x3_hat,
        },
        p,
        settings.playback_substeps,
    )
}

/// Speed deviation seen by the terminal: derivative of the unwrapped
/// terminal-voltage angle. Used as the speed reference when no ground truth
/// is available.
pub fn x2_from_terminal(y: &[TerminalMeasurement]) -> Result<Vec<f64>> {
    let dt = sample_period(y)?;
    derivative(&unwrap_angles(&y.iter().map(|m| m.y2).collect::<Vec<_>>()), dt)
}

/// One scenario prepared for validation.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    pub name: &'a str,
    pub terminal: &'a [TerminalMeasurement],
    /// Speed deviation to score against.
    pub x2_ref: &'a [f64],
    /// Reference parameters, if known.
    pub theta_ref: Option<[f64; 2]>,
}

/// Everything produced while validating one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRun {
    pub report: ValidationReport,
    pub estimation: Estimation,
    pub playback: PlaybackResult,
}

/// Full processing and scoring of one scenario. sMAPE windows start at the
/// convergence time (or at the last sample if the estimate never settled).
pub fn validate_scenario(
    sc: &Scenario<'_>,
    p: &SgParams,
    gov: &GovernorTurbineParams,
    cfg: &EstimatorConfig,
    delta2_ref: f64,
    settings: &PipelineSettings,
) -> Result<ValidationRun> {
    if sc.x2_ref.len() != sc.terminal.len() {
        return Err(DseError::LengthMismatch {
            left: sc.terminal.len(),
            right: sc.x2_ref.len(),
        });
    }
    let r = reconstruct(sc.terminal, p, gov, settings)?;
    let e = estimate(r, cfg, delta2_ref)?;
    let theta_hat = e.theta_hat();
    let t = e.reconstruction.t();
    let tc = match convergence_time(&t, &e.theta_series(), settings.convergence_band) {
        Ok(tc) => Some(tc),
        Err(DseError::NeverConverged) => None,
        Err(err) => return Err(err),
    };
    let start = tc.map(|tc| t.partition_point(|&x| x < tc)).unwrap_or(t.len() - 1);
    let pb = playback(&e.reconstruction, sc.terminal, theta_hat, sc.x2_ref, p, settings)?;
    let it: Vec<f64> = sc.terminal.iter().map(|m| m.y3).collect();
    let (pt, qt): (Vec<f64>, Vec<f64>) = sc.terminal.iter().map(|m| m.powers()).unzip();
    let rel = |j: usize| sc.theta_ref.map(|r| 100.0 * (theta_hat[j] - r[j]).abs() / r[j].abs());
    let last = e.drem.last().map(|s| s.excitation).unwrap_or(0.0);
    let report = ValidationReport {
        scenario: sc.name.to_string(),
        theta_hat,
        theta_ref: sc.theta_ref,
        a1_error_pct: rel(0),
        a2_error_pct: rel(1),
        convergence_time: tc,
        smape_x2_observer: smape(&e.x2_hat, sc.x2_ref, start)?,
        smape_x2_playback: smape(&pb.x2_sim, sc.x2_ref, start)?,
        smape_it_playback: smape(&pb.it_sim, &it, start)?,
        smape_pt_playback: smape(&pb.pt_sim, &pt, start)?,
        smape_qt_playback: smape(&pb.qt_sim, &qt, start)?,
        excitation_integral: last,
        excitation_deficient: e.excitation_deficient,
        delta2_ref,
    };
    Ok(ValidationRun {
        report,
        estimation: e,
        playback: pb,
    })
}

/// Auto- and cross-validation with one estimator tuning. `Δ²_ref` comes from
/// the configuration if set, otherwise it is calibrated on the auto
/// scenario and reused unchanged for the cross scenario.
pub fn auto_cross_validate(
    auto: &Scenario<'_>,
    cross: &Scenario<'_>,
    p: &SgParams,
    gov: &GovernorTurbineParams,
    cfg: &EstimatorConfig,
    settings: &PipelineSettings,
) -> Result<(ValidationRun, ValidationRun)> {
    let delta2_ref = match cfg.delta2_ref {
        Some(v) => v,
        None => calibrate_delta2_ref(&reconstruct(auto.terminal, p, gov, settings)?, cfg)?,
    };
    let a = validate_scenario(auto, p, gov, cfg, delta2_ref, settings)?;
    let c = validate_scenario(cross, p, gov, cfg, delta2_ref, settings)?;
    Ok((a, c))
}

/// Generates the synthetic scenario described by a configuration.
pub fn simulate(cfg: &RunConfig) -> Result<SimulationOutput> {
    integrate_scenario(&cfg.machine, &cfg.governor, &cfg.network, &cfg.simulation, cfg.seed)
}

/// Terminal series and speed reference of one recorded scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScenario {
    pub terminal: Vec<TerminalMeasurement>,
    pub x2_ref: Vec<f64>,
}

impl PreparedScenario {
    /// Maps PMU data to the terminal. The speed reference is the recorded
    /// ground truth if given, otherwise the terminal-angle derivative.
    pub fn from_pmu(pmu: &[PmuSample], truth: Option<&[TruthSample]>, cfg: &RunConfig) -> Result<Self> {
        let terminal = map_to_terminal(pmu, &cfg.network)?;
        let x2_ref = match truth {
            Some(tr) => {
                if tr.len() != terminal.len() {
                    return Err(DseError::LengthMismatch {
                        left: terminal.len(),
                        right: tr.len(),
                    });
                }
                tr.iter().map(|s| s.x2).collect()
            }
            None => x2_from_terminal(&terminal)?,
        };
        Ok(Self { terminal, x2_ref })
    }

    pub fn scenario<'a>(&'a self, name: &'a str, cfg: &RunConfig) -> Scenario<'a> {
        Scenario {
            name,
            terminal: &self.terminal,
            x2_ref: &self.x2_ref,
            theta_ref: Some([cfg.machine.a1(), cfg.machine.a2()]),
        }
    }
}
