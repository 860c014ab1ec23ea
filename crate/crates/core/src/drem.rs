//! Identification of `θ = [a1, a2]` by dynamic regressor extension and
//! mixing.
//!
//! Filtering the swing equation with the third-order lag
//! `F(s) = λ1λ2λ3/((s+λ1)(s+λ2)(s+λ3))` gives the scalar regression
//! `z = ψᵀθ` with `z = F[s²x1]` and `ψ = [−F[s·x1], F[T_m − T_e]]`. The
//! operator `H = K·[1, c1c2·s/((s+c1)(s+c2))]ᵀ` stacks it into the square
//! system `Z = Ψθ`; multiplying by `adj Ψ` decouples it into
//! `𝒵_j = Δ·θ_j` with `Δ = det Ψ`, and each θ_j is estimated by its own
//! gradient law `θ̂̇_j = −γ_j·K^γ_j·Δ·(Δ·θ̂_j − 𝒵_j)`.
//!
//! All continuous filters are discretized with the bilinear transform at the
//! data rate; the estimator law uses forward Euler.

use std::collections::VecDeque;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};

/// Largest admissible `dt·max(pole)`.
pub const STEP_LIMIT: f64 = 0.5;

/// Lower bound on the averaged excitation inside the adaptive gain.
pub const DELTA2_FLOOR: f64 = 1e-12;

/// Tuning of the estimator and the speed observer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub c1: f64,
    pub c2: f64,
    /// Accepted for compatibility with published tunings; unused.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
    /// Gain of the H-operator.
    #[serde(rename = "k_h")]
    pub k_h: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Speed-observer gain.
    pub k: f64,
    pub epsilon: f64,
    pub gain_upper: f64,
    /// Moving-average window for Δ² (s).
    pub ma_window: f64,
    /// Reference excitation level. `None` means "calibrate on the
    /// auto-validation scenario".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta2_ref: Option<f64>,
    /// Initial parameter estimate `[a1, a2]`.
    pub theta0: [f64; 2],
    /// Minimum mean growth rate of `∫Δ²` (per second) below which the run
    /// is flagged as insufficiently excited.
    pub excitation_rate_floor: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            lambda1: 8.0,
            lambda2: 6.2,
            lambda3: 7.4,
            c1: 8.0,
            c2: 6.0,
            c3: None,
            k_h: 6.5,
            gamma1: 850.0,
            gamma2: 850.0,
            k: 8.0,
            epsilon: 0.01,
            gain_upper: 100.0,
            ma_window: 10.0,
            delta2_ref: None,
            theta0: [0.0, 0.0],
            excitation_rate_floor: 1e-10,
        }
    }
}

impl EstimatorConfig {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        let mut positive = |key: &str, val: f64| {
            if !(val > 0.0 && val.is_finite()) {
                v.push(format!("{prefix}.{key}: must be > 0"));
            }
        };
        positive("lambda1", self.lambda1);
        positive("lambda2", self.lambda2);
        positive("lambda3", self.lambda3);
        positive("c1", self.c1);
        positive("c2", self.c2);
        positive("k_h", self.k_h);
        positive("gamma1", self.gamma1);
        positive("gamma2", self.gamma2);
        positive("k", self.k);
        positive("epsilon", self.epsilon);
        positive("gain_upper", self.gain_upper);
        positive("ma_window", self.ma_window);
        if let Some(r) = self.delta2_ref {
            positive("delta2_ref", r);
        }
        if self.epsilon >= self.gain_upper {
            v.push(format!("{prefix}.epsilon: must be below gain_upper"));
        }
        if !(self.excitation_rate_floor >= 0.0) {
            v.push(format!("{prefix}.excitation_rate_floor: must be >= 0"));
        }
        if !self.theta0.iter().all(|x| x.is_finite()) {
            v.push(format!("{prefix}.theta0: must be finite"));
        }
        v
    }

    fn max_pole(&self) -> f64 {
        [self.lambda1, self.lambda2, self.lambda3, self.c1, self.c2]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn check_step(dt: f64, poles: &[f64]) -> Result<()> {
    if !(dt > 0.0) {
        return Err(DseError::InvalidArgument("dt must be > 0".into()));
    }
    let product = dt * poles.iter().copied().fold(0.0, f64::max);
    if product >= STEP_LIMIT {
        return Err(DseError::StepTooLarge {
            product,
            limit: STEP_LIMIT,
        });
    }
    Ok(())
}

/// Bilinear discretization of `(b1·s + b0)/(s + λ)`.
///
/// Without an explicit reset the section starts in steady state for its
/// first input sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrder {
    b1: f64,
    b0: f64,
    pole: f64,
    alpha: f64,
    state: Option<(f64, f64)>,
}

impl FirstOrder {
    /// `λ/(s + λ)`.
    pub fn lag(pole: f64, dt: f64) -> Self {
        Self {
            b1: 0.0,
            b0: pole,
            pole,
            alpha: 2.0 / dt,
            state: None,
        }
    }

    /// `λ·s/(s + λ)`.
    pub fn derivative(pole: f64, dt: f64) -> Self {
        Self {
            b1: pole,
            b0: 0.0,
            pole,
            alpha: 2.0 / dt,
            state: None,
        }
    }

    pub fn dc_gain(&self) -> f64 {
        self.b0 / self.pole
    }

    /// Forces a zero initial state instead of steady-state priming.
    pub fn reset_zero(&mut self) {
        self.state = Some((0.0, 0.0));
    }

    pub fn step(&mut self, u: f64) -> f64 {
        let (u_prev, y_prev) = self.state.unwrap_or((u, self.dc_gain() * u));
        let a = self.alpha;
        let y = ((self.b1 * a + self.b0) * u + (self.b0 - self.b1 * a) * u_prev - (self.pole - a) * y_prev)
            / (a + self.pole);
        self.state = Some((u, y));
        y
    }
}

/// Series connection of first-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    sections: Vec<FirstOrder>,
}

impl Cascade {
    pub fn new(sections: Vec<FirstOrder>) -> Self {
        Self { sections }
    }

    pub fn reset_zero(&mut self) {
        self.sections.iter_mut().for_each(FirstOrder::reset_zero);
    }

    pub fn dc_gain(&self) -> f64 {
        self.sections.iter().map(FirstOrder::dc_gain).product()
    }

    pub fn step(&mut self, u: f64) -> f64 {
        self.sections.iter_mut().fold(u, |x, s| s.step(x))
    }
}

/// The third-order lag `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lag3(Cascade);

impl Lag3 {
    pub fn new(lambdas: [f64; 3], dt: f64) -> Result<Self> {
        check_step(dt, &lambdas)?;
        Ok(Self(Cascade::new(
            lambdas.iter().map(|&l| FirstOrder::lag(l, dt)).collect(),
        )))
    }

    pub fn reset_zero(&mut self) {
        self.0.reset_zero();
    }

    pub fn dc_gain(&self) -> f64 {
        self.0.dc_gain()
    }

    pub fn step(&mut self, u: f64) -> f64 {
        self.0.step(u)
    }
}

/// `s·F` and `s²·F` realized from `x1` directly, without differencing.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredDerivatives {
    first: Cascade,
    second: Cascade,
}

impl FilteredDerivatives {
    pub fn new(lambdas: [f64; 3], dt: f64) -> Result<Self> {
        check_step(dt, &lambdas)?;
        let [l1, l2, l3] = lambdas;
        Ok(Self {
            first: Cascade::new(vec![
                FirstOrder::derivative(l1, dt),
                FirstOrder::lag(l2, dt),
                FirstOrder::lag(l3, dt),
            ]),
            second: Cascade::new(vec![
                FirstOrder::derivative(l1, dt),
                FirstOrder::derivative(l2, dt),
                FirstOrder::lag(l3, dt),
            ]),
        })
    }

    /// Returns `(F[s²x1], F[s·x1])`.
    pub fn step(&mut self, x1: f64) -> (f64, f64) {
        (self.second.step(x1), self.first.step(x1))
    }
}

/// The extension operator `H = K·[1, c1c2·s/((s+c1)(s+c2))]ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HOperator {
    gain: f64,
    channel: Cascade,
}

impl HOperator {
    pub fn new(gain: f64, c1: f64, c2: f64, dt: f64) -> Result<Self> {
        check_step(dt, &[c1, c2])?;
        Ok(Self {
            gain,
            channel: Cascade::new(vec![FirstOrder::derivative(c1, dt), FirstOrder::lag(c2, dt)]),
        })
    }

    pub fn reset_zero(&mut self) {
        self.channel.reset_zero();
    }

    pub fn step(&mut self, u: f64) -> [f64; 2] {
        [self.gain * u, self.gain * self.channel.step(u)]
    }
}

/// Mixing step: `Δ = det Ψ`, `𝒵 = adj(Ψ)·Z`.
pub fn extend_and_mix(z_h: [f64; 2], psi_h: [[f64; 2]; 2]) -> (f64, [f64; 2]) {
    let [[a, b], [c, d]] = psi_h;
    let delta = a * d - b * c;
    (delta, [d * z_h[0] - b * z_h[1], -c * z_h[0] + a * z_h[1]])
}

/// Sliding-window mean of Δ² over a fixed number of samples. The window
/// grows from one sample until it is full.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingAverage {
    buf: VecDeque<f64>,
    capacity: usize,
    sum: f64,
    pushes: usize,
}

impl MovingAverage {
    pub fn new(window: f64, dt: f64) -> Self {
        let capacity = ((window / dt).round() as usize).max(1);
        Self {
            buf: VecDeque::with_capacity(capacity),
            capacity,
            sum: 0.0,
            pushes: 0,
        }
    }

    pub fn push(&mut self, x: f64) -> f64 {
        if self.buf.len() == self.capacity {
            if let Some(old) = self.buf.pop_front() {
                self.sum -= old;
            }
        }
        self.buf.push_back(x);
        self.sum += x;
        self.pushes += 1;
        if self.pushes.is_multiple_of(self.capacity) {
            // Resync the running sum once per window length.
            self.sum = self.buf.iter().sum();
        }
        self.mean()
    }

    pub fn mean(&self) -> f64 {
        if self.buf.is_empty() {
            0.0
        } else {
            (self.sum / self.buf.len() as f64).max(0.0)
        }
    }
}

/// `K^γ = clamp(Δ²_ref / max(Δ̄², floor), ε, upper)`.
pub fn adaptive_gain(delta2_ma: f64, delta2_ref: f64, epsilon: f64, gain_upper: f64) -> f64 {
    (delta2_ref / delta2_ma.max(DELTA2_FLOOR)).clamp(epsilon, gain_upper)
}

/// One forward-Euler step of the scalar estimator. The flag is set when
/// `γ·K^γ·Δ²·dt ≥ 2`, where the discrete error recursion stops contracting.
pub fn estimator_step(theta_hat: f64, delta: f64, z_cal: f64, gamma: f64, k_gamma: f64, dt: f64) -> (f64, bool) {
    let next = theta_hat - gamma * k_gamma * delta * (delta * theta_hat - z_cal) * dt;
    (next, gamma * k_gamma * delta * delta * dt >= 2.0)
}

/// Running trapezoidal integral of Δ².
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExcitationMetric {
    value: f64,
    last: Option<f64>,
}

impl ExcitationMetric {
    pub fn push(&mut self, delta: f64, dt: f64) -> f64 {
        let d2 = delta * delta;
        if let Some(prev) = self.last {
            self.value += 0.5 * dt * (prev + d2);
        }
        self.last = Some(d2);
        self.value
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Cumulative `∫Δ²` of a sampled sequence.
pub fn excitation_metric(delta: &[f64], dt: f64) -> Vec<f64> {
    let mut m = ExcitationMetric::default();
    delta.iter().map(|&d| m.push(d, dt)).collect()
}

/// Regressor sample before extension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressorSample {
    pub z: f64,
    pub psi_regressor: [f64; 2],
}

/// Builds `z` and `ψ` from `x1` and `T_m − T_e` sample by sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorFilter {
    derivs: FilteredDerivatives,
    lag: Lag3,
}

impl RegressorFilter {
    pub fn new(cfg: &EstimatorConfig, dt: f64) -> Result<Self> {
        let l = [cfg.lambda1, cfg.lambda2, cfg.lambda3];
        Ok(Self {
            derivs: FilteredDerivatives::new(l, dt)?,
            lag: Lag3::new(l, dt)?,
        })
    }

    pub fn step(&mut self, x1: f64, torque_gap: f64) -> RegressorSample {
        let (z, s1) = self.derivs.step(x1);
        RegressorSample {
            z,
            psi_regressor: [-s1, self.lag.step(torque_gap)],
        }
    }
}

/// Filter chain up to the mixing step.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingFilter {
    regressor: RegressorFilter,
    h_z: HOperator,
    h_psi: [HOperator; 2],
}

impl MixingFilter {
    pub fn new(cfg: &EstimatorConfig, dt: f64) -> Result<Self> {
        let h = HOperator::new(cfg.k_h, cfg.c1, cfg.c2, dt)?;
        Ok(Self {
            regressor: RegressorFilter::new(cfg, dt)?,
            h_z: h.clone(),
            h_psi: [h.clone(), h],
        })
    }

    /// Returns `(Δ, 𝒵)` for the next sample.
    pub fn step(&mut self, x1: f64, torque_gap: f64) -> (f64, [f64; 2]) {
        let r = self.regressor.step(x1, torque_gap);
        let z_h = self.h_z.step(r.z);
        let p1 = self.h_psi[0].step(r.psi_regressor[0]);
        let p2 = self.h_psi[1].step(r.psi_regressor[1]);
        extend_and_mix(z_h, [[p1[0], p2[0]], [p1[1], p2[1]]])
    }
}

/// Per-sample diagnostics of the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DremSample {
    pub t: f64,
    pub theta_hat: [f64; 2],
    pub delta: f64,
    pub delta2_ma: f64,
    pub k_gamma: [f64; 2],
    pub excitation: f64,
}

/// Full estimator state for one run.
#[derive(Debug, Clone)]
pub struct DremEstimator {
    cfg: EstimatorConfig,
    delta2_ref: f64,
    dt: f64,
    mixing: MixingFilter,
    ma: MovingAverage,
    excitation: ExcitationMetric,
    theta_hat: [f64; 2],
    unstable_steps: usize,
}

impl DremEstimator {
    pub fn new(cfg: &EstimatorConfig, delta2_ref: f64, dt: f64) -> Result<Self> {
        check_step(dt, &[cfg.max_pole()])?;
        if !(delta2_ref > 0.0 && delta2_ref.is_finite()) {
            return Err(DseError::InvalidArgument(format!(
                "delta2_ref must be > 0, got {delta2_ref}"
            )));
        }
        Ok(Self {
            cfg: *cfg,
            delta2_ref,
            dt,
            mixing: MixingFilter::new(cfg, dt)?,
            ma: MovingAverage::new(cfg.ma_window, dt),
            excitation: ExcitationMetric::default(),
            theta_hat: cfg.theta0,
            unstable_steps: 0,
        })
    }

    pub fn theta_hat(&self) -> [f64; 2] {
        self.theta_hat
    }

    /// Number of steps where the Euler update could not contract.
    pub fn unstable_steps(&self) -> usize {
        self.unstable_steps
    }

    /// Consumes one sample and returns the updated estimate and diagnostics.
    pub fn step(&mut self, t: f64, x1: f64, torque_gap: f64) -> DremSample {
        let (delta, z_cal) = self.mixing.step(x1, torque_gap);
        let delta2_ma = self.ma.push(delta * delta);
        let kg = adaptive_gain(delta2_ma, self.delta2_ref, self.cfg.epsilon, self.cfg.gain_upper);
        let excitation = self.excitation.push(delta, self.dt);
        let gammas = [self.cfg.gamma1, self.cfg.gamma2];
        for j in 0..2 {
            let (next, unstable) = estimator_step(self.theta_hat[j], delta, z_cal[j], gammas[j], kg, self.dt);
            if unstable {
                self.unstable_steps += 1;
            }
            self.theta_hat[j] = next;
        }
        DremSample {
            t,
            theta_hat: self.theta_hat,
            delta,
            delta2_ma,
            k_gamma: [kg, kg],
            excitation,
        }
    }
}

/// Result of a full estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationRun {
    pub samples: Vec<DremSample>,
    /// Set when the mean growth of `∫Δ²` stayed below the configured floor.
    pub excitation_deficient: bool,
    pub unstable_steps: usize,
}

/// Mean of Δ² over a run with the estimator disabled; used to calibrate
/// `Δ²_ref` on a reference scenario.
pub fn reference_excitation(x1: &[f64], torque_gap: &[f64], cfg: &EstimatorConfig, dt: f64) -> Result<f64> {
    if x1.len() != torque_gap.len() {
        return Err(DseError::LengthMismatch {
            left: x1.len(),
            right: torque_gap.len(),
        });
    }
    if x1.is_empty() {
        return Err(DseError::TooShort { need: 1, got: 0 });
    }
    let mut mixing = MixingFilter::new(cfg, dt)?;
    let sum: f64 = x1
        .iter()
        .zip(torque_gap)
        .map(|(&x, &u)| mixing.step(x, u).0.powi(2))
        .sum();
    Ok(sum / x1.len() as f64)
}

/// Runs the estimator over aligned `t`, `x1`, `T_m − T_e` series.
pub fn run_estimation(
    t: &[f64],
    x1: &[f64],
    torque_gap: &[f64],
    cfg: &EstimatorConfig,
    delta2_ref: f64,
    dt: f64,
) -> Result<EstimationRun> {
    if x1.len() != t.len() || torque_gap.len() != t.len() {
        return Err(DseError::LengthMismatch {
            left: t.len(),
            right: x1.len().min(torque_gap.len()),
        });
    }
    let mut est = DremEstimator::new(cfg, delta2_ref, dt)?;
    let samples: Vec<DremSample> = t
        .iter()
        .zip(x1)
        .zip(torque_gap)
        .map(|((&t, &x), &u)| est.step(t, x, u))
        .collect();
    let excitation_deficient = excitation_deficient(&samples, cfg.excitation_rate_floor);
    if excitation_deficient {
        warn!("insufficient excitation: the integral of delta^2 grows slower than the configured floor");
    }
    if est.unstable_steps() > 0 {
        warn!(
            "{} estimator steps exceeded the Euler stability bound (gamma*K*delta^2*dt >= 2)",
            est.unstable_steps()
        );
    }
    Ok(EstimationRun {
        samples,
        excitation_deficient,
        unstable_steps: est.unstable_steps(),
    })
}

fn excitation_deficient(samples: &[DremSample], floor: f64) -> bool {
    match (samples.first(), samples.last()) {
        (Some(a), Some(b)) if b.t > a.t => b.excitation / (b.t - a.t) < floor,
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Steady-state amplitude and phase of a filter driven by sin(ωt),
    /// from a least-squares fit over the last full periods.
    fn sine_response(mut f: impl FnMut(f64) -> f64, omega: f64, dt: f64, settle: f64) -> (f64, f64) {
        let period = 2.0 * PI / omega;
        let n_settle = (settle / dt) as usize;
        let n_fit = ((4.0 * period) / dt).round() as usize;
        let (mut ss, mut sc) = (0.0, 0.0);
        for k in 0..n_settle + n_fit {
            let t = k as f64 * dt;
            let y = f(t);
            if k >= n_settle {
                ss += y * (omega * t).sin();
                sc += y * (omega * t).cos();
            }
        }
        let a = 2.0 * ss / n_fit as f64;
        let b = 2.0 * sc / n_fit as f64;
        (a.hypot(b), b.atan2(a))
    }

    #[test]
    fn lag3_rejects_large_steps() {
        assert!(matches!(
            Lag3::new([8.0, 6.2, 7.4], 0.1),
            Err(DseError::StepTooLarge { .. })
        ));
        assert!(Lag3::new([8.0, 6.2, 7.4], 0.02).is_ok());
    }

    #[test]
    fn lag3_unit_dc_gain() {
        let dt = 0.02;
        let mut f = Lag3::new([8.0, 6.2, 7.4], dt).unwrap();
        assert!((f.dc_gain() - 1.0).abs() < 1e-15);
        f.reset_zero();
        let mut y = 0.0;
        for _ in 0..(10.0 / 6.2 / dt) as usize + 200 {
            y = f.step(2.5);
        }
        assert!((y - 2.5).abs() < 1e-6);
    }

    #[test]
    fn lag3_bode_point() {
        let dt = 1e-3;
        let l = 5.0;
        let mut f = Lag3::new([l; 3], dt).unwrap();
        f.reset_zero();
        let (amp, phase) = sine_response(|t| f.step((l * t).sin()), l, dt, 10.0);
        assert!((amp / (0.5f64.sqrt().powi(3)) - 1.0).abs() < 0.02);
        assert!((phase.to_degrees() + 135.0).abs() < 0.02 * 135.0);
    }

    #[test]
    fn lag3_impulse_integral() {
        let dt = 0.01;
        let mut f = Lag3::new([8.0, 6.2, 7.4], dt).unwrap();
        f.reset_zero();
        let mut area = 0.0;
        for k in 0..5000 {
            let u = if k == 0 { 1.0 / dt } else { 0.0 };
            area += f.step(u) * dt;
        }
        assert!((area - 1.0).abs() < 1e-6);
    }

    #[test]
    fn filtered_derivatives_of_ramp_and_constant() {
        let dt = 0.01;
        let mut d = FilteredDerivatives::new([8.0, 6.2, 7.4], dt).unwrap();
        let mut out = (0.0, 0.0);
        for k in 0..2000 {
            out = d.step(k as f64 * dt);
        }
        assert!(out.0.abs() < 1e-8 && (out.1 - 1.0).abs() < 1e-8);

        let mut d = FilteredDerivatives::new([8.0, 6.2, 7.4], dt).unwrap();
        for _ in 0..100 {
            let (a, b) = d.step(0.7);
            assert_eq!((a, b), (0.0, 0.0));
        }
    }

    #[test]
    fn filtered_derivatives_in_band() {
        let dt = 1e-3;
        let w = 0.3;
        let mut d1 = FilteredDerivatives::new([8.0, 6.2, 7.4], dt).unwrap();
        let (amp1, ph1) = sine_response(|t| d1.step((w * t).sin()).1, w, dt, 10.0);
        let mut d2 = FilteredDerivatives::new([8.0, 6.2, 7.4], dt).unwrap();
        let (amp2, ph2) = sine_response(|t| d2.step((w * t).sin()).0, w, dt, 10.0);
        assert!((amp1 / w - 1.0).abs() < 0.03);
        assert!((ph1 - PI / 2.0).abs() < 0.2);
        assert!((amp2 / (w * w) - 1.0).abs() < 0.03);
        assert!((ph2.abs() - PI).abs() < 0.2);
    }

    #[test]
    fn h_operator_channels() {
        let dt = 0.01;
        let mut h = HOperator::new(6.5, 8.0, 6.0, dt).unwrap();
        h.reset_zero();
        let mut out = [0.0; 2];
        for _ in 0..3000 {
            out = h.step(1.3);
        }
        assert!((out[0] - 6.5 * 1.3).abs() < 1e-12);
        assert!(out[1].abs() < 1e-6);
    }

    #[test]
    fn h_operator_phase_and_gain() {
        let dt = 1e-3;
        let (k, c1, c2) = (6.5, 8.0, 6.0);
        for w in [0.2, 2.0] {
            let mut h = HOperator::new(k, c1, c2, dt).unwrap();
            h.reset_zero();
            let (amp, phase) = sine_response(|t| h.step((w * t).sin())[1], w, dt, 10.0);
            let jw = num_complex::Complex64::new(0.0, w);
            let exact = k * c1 * c2 * jw / ((c1 + jw) * (c2 + jw));
            assert!((amp / exact.norm() - 1.0).abs() < 1e-3, "w={w}");
            assert!((phase - exact.arg()).abs() < 1e-3);
            if w < 0.5 {
                assert!((phase.to_degrees() - 90.0).abs() < 5.0);
            }
        }
    }

    #[test]
    fn mixing_examples() {
        let (d, z) = extend_and_mix([1.0, 2.0], [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!((d, z), (1.0, [1.0, 2.0]));
        let (d, z) = extend_and_mix([3.0, -1.0], [[1.0, 2.0], [2.0, 4.0]]);
        assert_eq!(d, 0.0);
        assert!(z.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn adaptive_gain_examples() {
        assert_eq!(adaptive_gain(0.3, 0.3, 0.01, 100.0), 1.0);
        assert_eq!(adaptive_gain(0.0, 0.3, 0.01, 100.0), 100.0);
        assert_eq!(adaptive_gain(30.0, 0.3, 0.01, 100.0), 0.01);
    }

    #[test]
    fn moving_average_window() {
        let mut m = MovingAverage::new(0.05, 0.01);
        assert_eq!(m.push(1.0), 1.0);
        assert_eq!(m.push(3.0), 2.0);
        for _ in 0..3 {
            m.push(3.0);
        }
        assert!((m.mean() - 2.6).abs() < 1e-15);
        assert!((m.push(3.0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn estimator_step_examples() {
        assert_eq!(estimator_step(1.7, 0.0, 0.0, 850.0, 1.0, 0.02), (1.7, false));
        assert_eq!(estimator_step(2.0, 0.5, 1.0, 850.0, 1.0, 0.001).0, 2.0);
        // Geometric contraction with factor 1 − γKΔ²dt.
        let (g, kg, d, dt, th) = (10.0, 1.0, 0.7, 0.01, 3.0);
        let mut x = 0.0;
        for n in 1..50 {
            x = estimator_step(x, d, d * th, g, kg, dt).0;
            let expected = th - th * (1.0 - g * kg * d * d * dt).powi(n);
            assert!((x - expected).abs() < 1e-12);
        }
        assert!(estimator_step(0.0, 1.0, 1.0, 850.0, 100.0, 0.02).1);
    }

    #[test]
    fn excitation_metric_examples() {
        let dt = 0.01;
        assert!(excitation_metric(&[0.0; 100], dt).iter().all(|&v| v == 0.0));
        let ones = excitation_metric(&[1.0; 1001], dt);
        assert!((ones[1000] - 10.0).abs() < 1e-12);
        let decaying: Vec<f64> = (0..4000).map(|k| (-(k as f64) * dt).exp()).collect();
        let m = excitation_metric(&decaying, dt);
        assert!((m[3999] - 0.5).abs() < 1e-4);
        assert!(m.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn equilibrium_gives_no_update() {
        let cfg = EstimatorConfig {
            theta0: [1.0, 20.0],
            ..EstimatorConfig::default()
        };
        let n = 500;
        let t: Vec<f64> = (0..n).map(|k| 0.02 * k as f64).collect();
        let run = run_estimation(&t, &vec![0.6; n], &vec![0.0; n], &cfg, 1e-4, 0.02).unwrap();
        for s in &run.samples {
            assert_eq!(s.theta_hat, [1.0, 20.0]);
            assert_eq!(s.k_gamma, [100.0, 100.0]);
            assert!(s.delta2_ma < DELTA2_FLOOR);
        }
        assert!(run.excitation_deficient);
    }

    #[test]
    fn lti_filters_commute() {
        let dt = 1e-3;
        let cfg = EstimatorConfig::default();
        let l = [cfg.lambda1, cfg.lambda2, cfg.lambda3];
        let u = |t: f64| (0.7 * t).sin() + 0.5 * (2.3 * t).cos();
        let mut f1 = Lag3::new(l, dt).unwrap();
        let mut h1 = HOperator::new(cfg.k_h, cfg.c1, cfg.c2, dt).unwrap();
        let mut f2 = Lag3::new(l, dt).unwrap();
        let mut h2 = HOperator::new(cfg.k_h, cfg.c1, cfg.c2, dt).unwrap();
        f1.reset_zero();
        h1.reset_zero();
        f2.reset_zero();
        h2.reset_zero();
        let mut worst: f64 = 0.0;
        for k in 0..20_000 {
            let x = u(k as f64 * dt);
            let a = h1.step(f1.step(x))[1];
            let b = f2.step(h2.step(x)[1] / cfg.k_h) * cfg.k_h;
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-9, "{worst}");
    }

    proptest! {
        #[test]
        fn mixing_decouples(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, d in -5.0f64..5.0,
                            t1 in -50.0f64..50.0, t2 in -50.0f64..50.0) {
            let psi = [[a, b], [c, d]];
            let z = [a * t1 + b * t2, c * t1 + d * t2];
            let (delta, zc) = extend_and_mix(z, psi);
            prop_assert!((zc[0] - delta * t1).abs() < 1e-10 * (1.0 + t1.abs()) * 25.0);
            prop_assert!((zc[1] - delta * t2).abs() < 1e-10 * (1.0 + t2.abs()) * 25.0);
        }

        #[test]
        fn gain_is_clamped(d2 in 0.0f64..1e3, r in 1e-9f64..1e3) {
            let k = adaptive_gain(d2, r, 0.01, 100.0);
            prop_assert!((0.01..=100.0).contains(&k));
        }

        #[test]
        fn scalar_error_never_grows(theta in -50.0f64..50.0, th0 in -50.0f64..50.0,
                                    deltas in proptest::collection::vec(-0.5f64..0.5, 1..200)) {
            let (g, kg, dt) = (850.0, 1.0, 0.02);
            let mut x = th0;
            for d in deltas {
                let (next, unstable) = estimator_step(x, d, d * theta, g, kg, dt);
                if !unstable {
                    prop_assert!((next - theta).abs() <= (x - theta).abs() * (1.0 + 1e-12) + 1e-12);
                }
                x = next;
            }
        }
    }
}
