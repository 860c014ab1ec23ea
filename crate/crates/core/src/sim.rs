//! Synthetic measurement generator: the flux-decay machine with
//! governor/turbine, connected through the mapping network to a grid source
//! at the substation bus, integrated with classic fixed-step RK4.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use log::debug;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};
use crate::machine::{air_gap_torque, flux_decay_rhs, GovernorTurbineParams, GovernorTurbineState, SgParams, SgState};
use crate::network::{aux_current, AuxAverager, NetworkParams, PmuSample, TerminalMeasurement};
use crate::phasor::{dq_decompose, Phasor};

/// Fixed-point tolerance for the auxiliary-current iteration (pu).
pub const AUX_TOLERANCE: f64 = 1e-10;
pub const AUX_MAX_ITERATIONS: usize = 50;

/// Classic fourth-order Runge–Kutta step.
pub fn rk4_step<const N: usize>(
    mut f: impl FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    t: f64,
    y: &[f64; N],
    h: f64,
) -> Result<[f64; N]> {
    let shifted = |y: &[f64; N], k: &[f64; N], a: f64| -> [f64; N] { std::array::from_fn(|i| y[i] + a * k[i]) };
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &shifted(y, &k1, 0.5 * h))?;
    let k3 = f(t + 0.5 * h, &shifted(y, &k2, 0.5 * h))?;
    let k4 = f(t + h, &shifted(y, &k3, h))?;
    Ok(std::array::from_fn(|i| {
        y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    }))
}

/// `amplitude·sin(2π·freq·τ + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sine {
    pub amplitude: f64,
    /// Hz.
    pub freq: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Sine {
    fn at(&self, tau: f64) -> f64 {
        self.amplitude * (TAU * self.freq * tau + self.phase).sin()
    }
}

/// A step change applied at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub time: f64,
    pub size: f64,
}

/// Voltage source behind the substation bus. All disturbances start after
/// the quiet period; before it the source sits at `v0∠theta0`. With
/// `ramp > 0` the sines and the frequency offset fade in over a raised-cosine
/// envelope of that length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSource {
    pub v0: f64,
    #[serde(default)]
    pub theta0: f64,
    #[serde(default)]
    pub quiet: f64,
    #[serde(default)]
    pub ramp: f64,
    /// Frequency deviation from nominal after the quiet period (Hz).
    #[serde(default)]
    pub freq_offset: f64,
    #[serde(default)]
    pub angle_sines: Vec<Sine>,
    #[serde(default)]
    pub magnitude_sines: Vec<Sine>,
    #[serde(default)]
    pub angle_steps: Vec<Step>,
}

impl Default for GridSource {
    fn default() -> Self {
        Self {
            v0: 1.0,
            theta0: 0.0,
            quiet: 0.0,
            ramp: 0.0,
            freq_offset: 0.0,
            angle_sines: Vec::new(),
            magnitude_sines: Vec::new(),
            angle_steps: Vec::new(),
        }
    }
}

impl GridSource {
    pub fn constant(v0: f64, theta0: f64) -> Self {
        Self {
            v0,
            theta0,
            ..Self::default()
        }
    }

    pub fn magnitude(&self, t: f64) -> f64 {
        let tau = t - self.quiet;
        if tau <= 0.0 {
            return self.v0;
        }
        self.v0 + self.envelope(tau) * self.magnitude_sines.iter().map(|s| s.at(tau)).sum::<f64>()
    }

    fn envelope(&self, tau: f64) -> f64 {
        if tau >= self.ramp {
            1.0
        } else {
            0.5 * (1.0 - (PI * tau / self.ramp).cos())
        }
    }

    /// Integral of the envelope from the end of the quiet period.
    fn envelope_integral(&self, tau: f64) -> f64 {
        if tau >= self.ramp {
            tau - 0.5 * self.ramp
        } else {
            0.5 * tau - self.ramp / TAU * (PI * tau / self.ramp).sin()
        }
    }

    pub fn angle(&self, t: f64) -> f64 {
        let steps: f64 = self.angle_steps.iter().filter(|s| t >= s.time).map(|s| s.size).sum();
        let tau = t - self.quiet;
        if tau <= 0.0 {
            return self.theta0 + steps;
        }
        self.theta0
            + steps
            + TAU * self.freq_offset * self.envelope_integral(tau)
            + self.envelope(tau) * self.angle_sines.iter().map(|s| s.at(tau)).sum::<f64>()
    }

    pub fn phasor(&self, t: f64) -> Phasor {
        Phasor::from_polar(self.magnitude(t), self.angle(t))
    }

    pub fn violations(&self, prefix: &str, horizon: f64) -> Vec<String> {
        let mut v = Vec::new();
        let bound = self.v0.abs() + self.magnitude_sines.iter().map(|s| s.amplitude.abs()).sum::<f64>();
        let floor = self.v0 - self.magnitude_sines.iter().map(|s| s.amplitude.abs()).sum::<f64>();
        if !(floor > 0.0 && bound.is_finite()) {
            v.push(format!("{prefix}.magnitude_sines: grid magnitude must stay > 0"));
        }
        if !self.theta0.is_finite() || !self.freq_offset.is_finite() || !self.quiet.is_finite() {
            v.push(format!("{prefix}: theta0, quiet and freq_offset must be finite"));
        }
        if !(self.ramp >= 0.0 && self.ramp.is_finite()) {
            v.push(format!("{prefix}.ramp: must be >= 0"));
        }
        if self.quiet > horizon {
            v.push(format!("{prefix}.quiet: exceeds the simulation horizon"));
        }
        v
    }
}

/// Tap position change at a given time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapChange {
    pub time: f64,
    pub tau: f64,
}

/// Scenario definition for the synthetic data generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Integration step (s).
    pub dt: f64,
    pub horizon: f64,
    /// PMU reporting rate (frames per second).
    pub report_rate: f64,
    /// Terminal-voltage magnitude of the initial equilibrium; sets E_f.
    pub vt_target: f64,
    /// Standard deviation of PMU magnitude noise (pu).
    #[serde(default)]
    pub noise_mag: f64,
    /// Standard deviation of PMU angle noise (rad).
    #[serde(default)]
    pub noise_ang: f64,
    pub grid: GridSource,
    #[serde(default)]
    pub tap_changes: Vec<TapChange>,
    /// Instability bound on |x2| (rad/s).
    pub max_speed_deviation: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 120.0,
            report_rate: 50.0,
            vt_target: 1.02,
            noise_mag: 0.0,
            noise_ang: 0.0,
            grid: GridSource::default(),
            tap_changes: Vec::new(),
            max_speed_deviation: 10.0,
        }
    }
}

impl SimulationConfig {
    /// Integration steps per reported sample.
    pub fn substeps(&self) -> Result<usize> {
        let period = 1.0 / self.report_rate;
        let ratio = period / self.dt;
        let n = ratio.round();
        if n < 1.0 || ((n * self.dt) - period).abs() > 1e-9 {
            return Err(DseError::InvalidArgument(format!(
                "dt = {} does not divide the reporting period {}",
                self.dt, period
            )));
        }
        Ok(n as usize)
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            v.push(format!("{prefix}.dt: must be > 0"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            v.push(format!("{prefix}.horizon: must be > 0"));
        }
        if !(self.report_rate > 0.0 && self.report_rate.is_finite()) {
            v.push(format!("{prefix}.report_rate: must be > 0"));
        } else if self.dt > 0.0 && self.substeps().is_err() {
            v.push(format!("{prefix}.dt: must divide the reporting period 1/report_rate"));
        }
        if !(self.vt_target > 0.0) {
            v.push(format!("{prefix}.vt_target: must be > 0"));
        }
        if !(self.noise_mag >= 0.0) {
            v.push(format!("{prefix}.noise_mag: must be >= 0"));
        }
        if !(self.noise_ang >= 0.0) {
            v.push(format!("{prefix}.noise_ang: must be >= 0"));
        }
        if !(self.max_speed_deviation > 0.0) {
            v.push(format!("{prefix}.max_speed_deviation: must be > 0"));
        }
        v.extend(self.grid.violations(&format!("{prefix}.grid"), self.horizon));
        v
    }

    fn tap_at(&self, default: f64, t: f64) -> f64 {
        self.tap_changes
            .iter()
            .filter(|c| t >= c.time)
            .fold(default, |_, c| c.tau)
    }
}

/// Phasors that close the machine–network loop at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkSolution {
    pub v_pmu: Phasor,
    pub i_pmu: Phasor,
    /// Terminal voltage (= LV bus voltage).
    pub v_t: Phasor,
    /// Terminal current `I_LV + I_AS`.
    pub i_t: Phasor,
    pub i_as: Phasor,
    pub itd: f64,
    pub itq: f64,
    pub te: f64,
    pub p_lv: f64,
}

impl NetworkSolution {
    pub fn terminal(&self, t: f64) -> TerminalMeasurement {
        TerminalMeasurement::from_phasors(t, self.v_t, self.i_t)
    }
}

/// Complex residual of the stator equation for rotor `(x1, x3)`.
fn stator_residual(x1: f64, x3: f64, v: Complex64, i: Complex64, p: &SgParams) -> Complex64 {
    let r = Complex64::from_polar(1.0, x1 - FRAC_PI_2);
    let iq = (i * r.conj()).im;
    Complex64::i() * x3 * r - Complex64::new(p.rs, p.xdp) * i - v + (p.xq - p.xdp) * iq * r
}

/// Solves the stator equation and the network equations for the PMU
/// current with the grid phasor imposed at the substation bus.
///
/// The auxiliary current depends on `P_LV` through the running mean held by
/// `aux`; it is resolved by fixed-point iteration without committing to
/// `aux`.
#[allow(clippy::too_many_arguments)]
pub fn solve_network_interconnection(
    x1: f64,
    x3: f64,
    grid: Phasor,
    tap: f64,
    t: f64,
    net: &NetworkParams,
    p: &SgParams,
    aux: &AuxAverager,
) -> Result<NetworkSolution> {
    let m = net.pmu_to_lv(tap)?;
    let v = grid.0;
    let terminal = |i_pmu: Complex64, i_as: Complex64| {
        let v_lv = m.a * v + m.b * i_pmu;
        let i_lv = m.c * v + m.d * i_pmu;
        (v_lv, i_lv, i_lv + i_as)
    };
    // The residual is real-affine in (Re I_PMU, Im I_PMU); three
    // evaluations give the affine map and a 2×2 solve gives its root.
    let solve = |i_as: Complex64| -> Result<Complex64> {
        let f = |i: Complex64| {
            let (v_lv, _, i_sg) = terminal(i, i_as);
            stator_residual(x1, x3, v_lv, i_sg, p)
        };
        let c0 = f(Complex64::new(0.0, 0.0));
        let e1 = f(Complex64::new(1.0, 0.0)) - c0;
        let e2 = f(Complex64::new(0.0, 1.0)) - c0;
        let det = e1.re * e2.im - e2.re * e1.im;
        let scale = e1.norm() * e2.norm();
        if !(det.abs() > 1e-12 * scale) {
            return Err(DseError::SingularNetwork { det: det.abs() });
        }
        let a = (-c0.re * e2.im + e2.re * c0.im) / det;
        let b = (-e1.re * c0.im + c0.re * e1.im) / det;
        Ok(Complex64::new(a, b))
    };

    let has_aux = aux.params().p_as_max > 0.0;
    let mut i_as = Complex64::new(0.0, 0.0);
    let mut i_pmu = solve(i_as)?;
    if has_aux {
        let mut converged = false;
        let mut change = f64::INFINITY;
        for _ in 0..AUX_MAX_ITERATIONS {
            let (v_lv, i_lv, _) = terminal(i_pmu, i_as);
            let p_lv = (v_lv * i_lv.conj()).re;
            let (p_as, q_as) = aux.preview(t, p_lv)?;
            let next = aux_current(p_as, q_as, Phasor(v_lv))?.0;
            change = (next - i_as).norm();
            i_as = next;
            i_pmu = solve(i_as)?;
            if change <= AUX_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(DseError::AuxNonConvergence {
                iterations: AUX_MAX_ITERATIONS,
                change,
            });
        }
    }
    let (v_lv, i_lv, i_sg) = terminal(i_pmu, i_as);
    let (itd, itq) = dq_decompose(i_sg.norm(), i_sg.arg(), x1);
    Ok(NetworkSolution {
        v_pmu: grid,
        i_pmu: Phasor(i_pmu),
        v_t: Phasor(v_lv),
        i_t: Phasor(i_sg),
        i_as: Phasor(i_as),
        itd,
        itq,
        te: air_gap_torque(x3, itd, itq, p),
        p_lv: (v_lv * i_lv.conj()).re,
    })
}

/// Ground-truth record of the simulated machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub tm: f64,
    pub te: f64,
    pub ef: f64,
}

/// Everything a scenario produces, sampled at the reporting rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub truth: Vec<TruthSample>,
    /// Noise-free terminal measurements.
    pub terminal: Vec<TerminalMeasurement>,
    /// PMU samples, with noise if configured.
    pub pmu: Vec<PmuSample>,
}

/// Operating point the scenario starts from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub state: SgState,
    pub ef: f64,
    pub solution: NetworkSolution,
}

/// Finds the equilibrium with `T_e = T_ref`, `|V_t| = vt_target`, zero
/// speed deviation and steady flux, for the grid phasor at `t = 0`.
pub fn find_equilibrium(
    p: &SgParams,
    gov: &GovernorTurbineParams,
    net: &NetworkParams,
    sim: &SimulationConfig,
) -> Result<Equilibrium> {
    let grid = sim.grid.phasor(0.0);
    let tap = sim.tap_at(net.transformer.tau, 0.0);
    let aux = AuxAverager::new(net.aux);
    let eval = |d: f64, x3: f64| -> Result<([f64; 2], NetworkSolution)> {
        let s = solve_network_interconnection(d, x3, grid, tap, 0.0, net, p, &aux)?;
        Ok(([s.te - gov.t_ref, s.v_t.magnitude() - sim.vt_target], s))
    };
    let mut x = [grid.angle() + 0.5, sim.vt_target + 0.5];
    for _ in 0..100 {
        let (f, _) = eval(x[0], x[1])?;
        if f[0].abs() < 1e-14 && f[1].abs() < 1e-14 {
            break;
        }
        let h = 1e-7;
        let (fa, _) = eval(x[0] + h, x[1])?;
        let (fb, _) = eval(x[0], x[1] + h)?;
        let j = [
            [(fa[0] - f[0]) / h, (fb[0] - f[0]) / h],
            [(fa[1] - f[1]) / h, (fb[1] - f[1]) / h],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(DseError::SingularNetwork { det: det.abs() });
        }
        let dx0 = (f[0] * j[1][1] - f[1] * j[0][1]) / det;
        let dx1 = (j[0][0] * f[1] - j[1][0] * f[0]) / det;
        // Damped step keeps the iterate in the stable branch.
        let scale = (0.3 / dx0.abs().max(dx1.abs())).min(1.0);
        x[0] -= scale * dx0;
        x[1] -= scale * dx1;
    }
    let (f, solution) = eval(x[0], x[1])?;
    if f[0].abs() > 1e-10 || f[1].abs() > 1e-10 || x[1] <= 0.0 {
        return Err(DseError::InvalidArgument(format!(
            "no equilibrium for T_ref = {} and vt_target = {} (residual {:e}, {:e})",
            gov.t_ref, sim.vt_target, f[0], f[1]
        )));
    }
    let ef = x[1] + (p.xd - p.xdp) * solution.itd;
    Ok(Equilibrium {
        state: SgState {
            x1: x[0],
            x2: 0.0,
            x3: x[1],
        },
        ef,
        solution,
    })
}

/// Integrates a scenario from its equilibrium and samples it at the PMU
/// reporting rate. `seed` drives the measurement noise.
pub fn integrate_scenario(
    p: &SgParams,
    gov: &GovernorTurbineParams,
    net: &NetworkParams,
    sim: &SimulationConfig,
    seed: u64,
) -> Result<SimulationOutput> {
    let n_sub = sim.substeps()?;
    let h = sim.dt;
    let eq = find_equilibrium(p, gov, net, sim)?;
    let ef = eq.ef;
    debug!(
        "equilibrium: x1 = {:.6}, x3 = {:.6}, ef = {:.6}, te = {:.6}",
        eq.state.x1, eq.state.x3, ef, eq.solution.te
    );
    let mut y = [eq.state.x1, eq.state.x2, eq.state.x3, gov.t_ref, gov.t_ref];
    let mut aux = AuxAverager::new(net.aux);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_mag = Normal::new(0.0, sim.noise_mag).map_err(|e| DseError::InvalidArgument(e.to_string()))?;
    let noise_ang = Normal::new(0.0, sim.noise_ang).map_err(|e| DseError::InvalidArgument(e.to_string()))?;

    let n_reports = (sim.horizon * sim.report_rate + 1e-9).floor() as usize + 1;
    let mut out = SimulationOutput {
        truth: Vec::with_capacity(n_reports),
        terminal: Vec::with_capacity(n_reports),
        pmu: Vec::with_capacity(n_reports),
    };

    let rhs = |t: f64, y: &[f64; 5], aux: &AuxAverager| -> Result<[f64; 5]> {
        let tap = sim.tap_at(net.transformer.tau, t);
        let s = solve_network_interconnection(y[0], y[2], sim.grid.phasor(t), tap, t, net, p, aux)?;
        let x = SgState {
            x1: y[0],
            x2: y[1],
            x3: y[2],
        };
        let dx = flux_decay_rhs(&x, y[4], s.te, s.itd, ef, p);
        let g = gov.derivatives(
            &GovernorTurbineState {
                servo_out: y[3],
                turbine_out: y[4],
            },
            y[1],
            p.omega_s,
        );
        Ok([dx.x1, dx.x2, dx.x3, g.servo_out, g.turbine_out])
    };

    for k in 0..n_reports {
        let t = k as f64 / sim.report_rate;
        let tap = sim.tap_at(net.transformer.tau, t);
        let s =
            solve_network_interconnection(y[0], y[2], sim.grid.phasor(t), tap, t, net, p, &aux).map_err(|e| e.at(k))?;
        aux.commit(t, s.p_lv).map_err(|e| e.at(k))?;
        out.truth.push(TruthSample {
            t,
            x1: y[0],
            x2: y[1],
            x3: y[2],
            tm: y[4],
            te: s.te,
            ef,
        });
        out.terminal.push(s.terminal(t));
        let (vm, va) = s.v_pmu.to_polar();
        let (im, ia) = s.i_pmu.to_polar();
        let mut noisy = |m: f64, a: f64| {
            if sim.noise_mag > 0.0 || sim.noise_ang > 0.0 {
                Phasor::from_polar(m + noise_mag.sample(&mut rng), a + noise_ang.sample(&mut rng))
            } else {
                Phasor::from_polar(m, a)
            }
        };
        let v = noisy(vm, va);
        let i = noisy(im, ia);
        out.pmu.push(PmuSample { t, v, i, tap });

        if k + 1 == n_reports {
            break;
        }
        for j in 0..n_sub {
            let ts = t + j as f64 * h;
            y = rk4_step(|tt, yy| rhs(tt, yy, &aux), ts, &y, h).map_err(|e| e.at(k))?;
        }
        if !y.iter().all(|v| v.is_finite()) || y[1].abs() > sim.max_speed_deviation || y[2] <= 0.0 {
            return Err(DseError::Instability {
                t: t + 1.0 / sim.report_rate,
                what: format!("state left bounds: x1 = {}, x2 = {}, x3 = {}", y[0], y[1], y[2]),
            });
        }
    }
    Ok(out)
}
