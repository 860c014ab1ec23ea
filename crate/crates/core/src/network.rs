//! Positive-sequence mapping between the substation PMU bus and the
//! generator terminal through the HV line, the tap-changing transformer and
//! the plant's auxiliary load.
//!
//! Current directions follow the line and transformer equations as written:
//! `I_PMU` flows from the substation bus into the line, `I_HV` flows from the
//! transformer into the line, `I_LV` flows from the generator bus into the
//! transformer and `I_SG = I_LV + I_AS` is the machine's terminal current.
//! Under generation the PMU therefore reports negative active power.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};
use crate::phasor::Phasor;

/// Below this relative size of `V_x` the auxiliary-current formula switches
/// to the equivalent form that does not divide by `V_x`.
const VX_RELATIVE_FLOOR: f64 = 1e-6;

/// 2×2 complex matrix mapping a (voltage, current) pair to another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transfer2 {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

impl Transfer2 {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Self {
            a: one,
            b: zero,
            c: zero,
            d: one,
        }
    }

    pub fn apply(&self, v: Phasor, i: Phasor) -> (Phasor, Phasor) {
        (Phasor(self.a * v.0 + self.b * i.0), Phasor(self.c * v.0 + self.d * i.0))
    }

    pub fn det(&self) -> Complex64 {
        self.a * self.d - self.b * self.c
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Transfer2) -> Transfer2 {
        Transfer2 {
            a: self.a * first.a + self.b * first.c,
            b: self.a * first.b + self.b * first.d,
            c: self.c * first.a + self.d * first.c,
            d: self.c * first.b + self.d * first.d,
        }
    }

    pub fn inverse(&self) -> Result<Transfer2> {
        let det = self.det();
        let scale = self.a.norm().max(self.b.norm()).max(self.c.norm()).max(self.d.norm());
        if !(det.norm() > 1e-14 * scale * scale) || !det.is_finite() {
            return Err(DseError::SingularNetwork { det: det.norm() });
        }
        Ok(Transfer2 {
            a: self.d / det,
            b: -self.b / det,
            c: -self.c / det,
            d: self.a / det,
        })
    }
}

/// π-equivalent line: total series impedance `z` and total shunt
/// admittance `y`, both as `[re, im]` in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineParams {
    pub z: Complex64,
    pub y: Complex64,
}

impl Default for LineParams {
    fn default() -> Self {
        Self {
            z: Complex64::new(0.005, 0.05),
            y: Complex64::new(0.0, 0.02),
        }
    }
}

impl LineParams {
    /// Validated constructor.
    pub fn new(z: Complex64, y: Complex64) -> Result<Self> {
        let lp = Self { z, y };
        let v = lp.violations("line");
        if !v.is_empty() {
            return Err(DseError::InvalidArgument(v.join("; ")));
        }
        lp.transfer().inverse()?;
        Ok(lp)
    }

    /// Maps `(V_PMU, I_PMU)` to `(V_HV, I_HV)`.
    pub fn transfer(&self) -> Transfer2 {
        let (z, y) = (self.z, self.y);
        let half = 1.0 + 0.5 * z * y;
        Transfer2 {
            a: half,
            b: -z,
            c: y + z * y * y / 4.0,
            d: -half,
        }
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if !self.z.is_finite() {
            v.push(format!("{prefix}.z: must be finite"));
        }
        if !self.y.is_finite() {
            v.push(format!("{prefix}.y: must be finite"));
        }
        v
    }
}

/// Line map from the substation to the transformer HV terminal:
/// `V_HV = (1 + ZY/2)·V_PMU − Z·I_PMU`,
/// `I_HV = (Y + ZY²/4)·V_PMU − (1 + ZY/2)·I_PMU`.
pub fn line_pmu_to_hv(v_pmu: Phasor, i_pmu: Phasor, lp: &LineParams) -> (Phasor, Phasor) {
    let (z, y) = (lp.z, lp.y);
    let half = 1.0 + 0.5 * z * y;
    let v_hv = half * v_pmu.0 - z * i_pmu.0;
    let i_hv = (y + z * y * y / 4.0) * v_pmu.0 - half * i_pmu.0;
    (Phasor(v_hv), Phasor(i_hv))
}

/// T-equivalent transformer with an ideal tap changer on the HV side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerParams {
    pub rcu_hv: f64,
    pub rcu_lv: f64,
    pub xsig_hv: f64,
    pub xsig_lv: f64,
    /// Magnetizing reactance.
    pub xm: f64,
    /// Shunt (iron-loss) resistance.
    pub rfe: f64,
    /// Additional voltage per tap; overridden per sample by measured taps.
    pub tau: f64,
    /// Phase shift (rad).
    pub phi: f64,
}

impl Default for TransformerParams {
    fn default() -> Self {
        Self {
            rcu_hv: 0.0005,
            rcu_lv: 0.0005,
            xsig_hv: 0.03,
            xsig_lv: 0.03,
            xm: 500.0,
            rfe: 1000.0,
            tau: 0.02,
            phi: 0.0,
        }
    }
}

impl TransformerParams {
    /// Ideal stand-in: no winding impedance, very large shunt branch.
    pub fn ideal() -> Self {
        Self {
            rcu_hv: 0.0,
            rcu_lv: 0.0,
            xsig_hv: 0.0,
            xsig_lv: 0.0,
            xm: 1e6,
            rfe: 1e6,
            tau: 0.0,
            phi: 0.0,
        }
    }

    pub fn with_tap(&self, tau: f64) -> Self {
        Self { tau, ..*self }
    }

    fn z_hv(&self) -> Complex64 {
        Complex64::new(self.rcu_hv, self.xsig_hv)
    }

    fn z_lv(&self) -> Complex64 {
        Complex64::new(self.rcu_lv, self.xsig_lv)
    }

    /// `(r_Fe + j·x_M)/(j·r_Fe·x_M)`.
    fn y_m(&self) -> Complex64 {
        Complex64::new(self.rfe, self.xm) / Complex64::new(0.0, self.rfe * self.xm)
    }

    fn ratio(&self) -> Result<f64> {
        let r = 1.0 + self.tau;
        if r == 0.0 || !r.is_finite() {
            return Err(DseError::InvalidTap);
        }
        Ok(r)
    }

    /// Maps `(V_HV, I_HV)` to `(V_LV, I_LV)` at the configured tap.
    pub fn transfer(&self) -> Result<Transfer2> {
        let r = self.ratio()?;
        let rot = Complex64::from_polar(1.0, -self.phi);
        let ym = self.y_m();
        let zhv = self.z_hv();
        let c = rot * ym / r;
        let d = rot * r * (1.0 + zhv * ym);
        Ok(Transfer2 {
            a: self.z_lv() * c + rot / r,
            b: self.z_lv() * d + rot * zhv * r,
            c,
            d,
        })
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        for (key, val) in [
            ("rcu_hv", self.rcu_hv),
            ("rcu_lv", self.rcu_lv),
            ("xsig_hv", self.xsig_hv),
            ("xsig_lv", self.xsig_lv),
        ] {
            if !(val >= 0.0 && val.is_finite()) {
                v.push(format!("{prefix}.{key}: must be finite and >= 0"));
            }
        }
        if !(self.xm > 0.0 && self.xm.is_finite()) {
            v.push(format!("{prefix}.xm: must be > 0"));
        }
        if !(self.rfe > 0.0 && self.rfe.is_finite()) {
            v.push(format!("{prefix}.rfe: must be > 0"));
        }
        if !self.tau.is_finite() || 1.0 + self.tau == 0.0 {
            v.push(format!("{prefix}.tau: 1 + tau must be nonzero"));
        }
        if !self.phi.is_finite() {
            v.push(format!("{prefix}.phi: must be finite"));
        }
        v
    }
}

/// Transformer map from the HV to the LV side. `I_LV` is evaluated first
/// and then used for `V_LV`.
pub fn transformer_hv_to_lv(v_hv: Phasor, i_hv: Phasor, tp: &TransformerParams) -> Result<(Phasor, Phasor)> {
    let r = tp.ratio()?;
    let rot = Complex64::from_polar(1.0, -tp.phi);
    let shunt = Complex64::new(tp.rfe, tp.xm);
    let jrx = Complex64::new(0.0, tp.rfe * tp.xm);
    let zhv = tp.z_hv();
    let i_lv = rot * (v_hv.0 * shunt / (r * jrx) + i_hv.0 * r + i_hv.0 * r * zhv * shunt / jrx);
    let v_lv = i_lv * tp.z_lv() + rot * (v_hv.0 / r + i_hv.0 * zhv * r);
    Ok((Phasor(v_lv), Phasor(i_lv)))
}

/// Auxiliary-system constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuxParams {
    pub p_as_max: f64,
    pub p_sg_max: f64,
    /// Power factor in (0, 1].
    pub pf: f64,
    /// Start of the averaging window (s).
    pub t0: f64,
}

impl Default for AuxParams {
    fn default() -> Self {
        Self {
            p_as_max: 0.05,
            p_sg_max: 1.0,
            pf: 0.85,
            t0: 0.0,
        }
    }
}

impl AuxParams {
    pub fn none() -> Self {
        Self {
            p_as_max: 0.0,
            ..Self::default()
        }
    }

    /// `P^AS_max / (P^SG_max − P^AS_max)`.
    pub fn ratio(&self) -> f64 {
        self.p_as_max / (self.p_sg_max - self.p_as_max)
    }

    /// `tan(arccos(pf))`.
    pub fn q_per_p(&self) -> f64 {
        self.pf.acos().tan()
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.p_as_max >= 0.0 && self.p_as_max.is_finite()) {
            v.push(format!("{prefix}.p_as_max: must be >= 0"));
        }
        if !(self.p_sg_max > self.p_as_max && self.p_sg_max.is_finite()) {
            v.push(format!("{prefix}.p_sg_max: must exceed p_as_max"));
        }
        if !(self.pf > 0.0 && self.pf <= 1.0) {
            v.push(format!("{prefix}.pf: must lie in (0, 1]"));
        }
        if !self.t0.is_finite() {
            v.push(format!("{prefix}.t0: must be finite"));
        }
        v
    }
}

/// Integral of the piecewise-linear interpolant through `(ts, vs)` over
/// `[a, b]`, held constant beyond the first and last samples.
fn integrate_held(ts: &[f64], vs: &[f64], a: f64, b: f64) -> f64 {
    let n = ts.len();
    let at = |s: f64| -> f64 {
        if s <= ts[0] {
            return vs[0];
        }
        if s >= ts[n - 1] {
            return vs[n - 1];
        }
        let k = ts.partition_point(|&x| x <= s) - 1;
        let w = (s - ts[k]) / (ts[k + 1] - ts[k]);
        vs[k] + w * (vs[k + 1] - vs[k])
    };
    let mut knots = vec![a];
    knots.extend(ts.iter().copied().filter(|&s| s > a && s < b));
    knots.push(b);
    knots
        .windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) * (at(w[0]) + at(w[1])))
        .sum()
}

/// Auxiliary active and reactive demand at time `t` from the recorded
/// `P_LV` history (trapezoidal quadrature of the running mean since `t0`).
pub fn aux_power(plv_t: &[f64], plv: &[f64], t: f64, ap: &AuxParams) -> Result<(f64, f64)> {
    if t <= ap.t0 {
        return Err(DseError::EmptyWindow { t, t0: ap.t0 });
    }
    if plv_t.is_empty() || plv_t.len() != plv.len() {
        return Err(DseError::LengthMismatch {
            left: plv_t.len(),
            right: plv.len(),
        });
    }
    let mean = integrate_held(plv_t, plv, ap.t0, t) / (t - ap.t0);
    let p = ap.ratio() * mean;
    Ok((p, p * ap.q_per_p()))
}

/// Streaming running mean of `P_LV` since `t0` (O(1) per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct AuxAverager {
    params: AuxParams,
    integral: f64,
    last: Option<(f64, f64)>,
}

impl AuxAverager {
    pub fn new(params: AuxParams) -> Self {
        Self {
            params,
            integral: 0.0,
            last: None,
        }
    }

    pub fn params(&self) -> &AuxParams {
        &self.params
    }

    fn integral_with(&self, t: f64, p_lv: f64) -> Result<f64> {
        match self.last {
            None => {
                if t < self.params.t0 {
                    return Err(DseError::EmptyWindow { t, t0: self.params.t0 });
                }
                Ok(p_lv * (t - self.params.t0))
            }
            Some((tl, pl)) => {
                if t < tl {
                    return Err(DseError::InvalidArgument(format!(
                        "aux averager time went backwards: {t} < {tl}"
                    )));
                }
                Ok(self.integral + 0.5 * (t - tl) * (pl + p_lv))
            }
        }
    }

    /// Auxiliary `(P_AS, Q_AS)` if `p_lv` were recorded at `t`, without
    /// committing it.
    pub fn preview(&self, t: f64, p_lv: f64) -> Result<(f64, f64)> {
        let integral = self.integral_with(t, p_lv)?;
        let span = t - self.params.t0;
        let mean = if span > 0.0 { integral / span } else { p_lv };
        let p = self.params.ratio() * mean;
        Ok((p, p * self.params.q_per_p()))
    }

    /// Records `p_lv` at `t` and returns the resulting `(P_AS, Q_AS)`.
    pub fn commit(&mut self, t: f64, p_lv: f64) -> Result<(f64, f64)> {
        let out = self.preview(t, p_lv)?;
        self.integral = self.integral_with(t, p_lv)?;
        self.last = Some((t, p_lv));
        Ok(out)
    }

    /// `P_AS` at `t` given the generator output `P_SG`, using
    /// `P_LV = P_SG − P_AS` inside the implicit trapezoid step.
    pub fn p_as_from_generation(&self, t: f64, p_sg: f64) -> Result<f64> {
        let c = self.params.ratio();
        match self.last {
            None => {
                if t < self.params.t0 {
                    return Err(DseError::EmptyWindow { t, t0: self.params.t0 });
                }
                Ok(c * p_sg / (1.0 + c))
            }
            Some((tl, pl)) => {
                let h = 0.5 * (t - tl);
                let base = self.integral + h * pl;
                let span = t - self.params.t0;
                Ok(c * (base + h * p_sg) / (span + c * h))
            }
        }
    }
}

/// Current drawn by a constant-power load `P + jQ` at voltage `v`:
/// `I_y = (P·V_y − Q·V_x)/|V|²` first, then `I_x = (P − V_y·I_y)/V_x`.
pub fn aux_current(p_as: f64, q_as: f64, v_lv: Phasor) -> Result<Phasor> {
    let (vx, vy) = (v_lv.re(), v_lv.im());
    let m2 = vx * vx + vy * vy;
    if m2 == 0.0 || !m2.is_finite() {
        return Err(DseError::ZeroVoltage);
    }
    let iy = (p_as * vy - q_as * vx) / m2;
    let ix = if vx.abs() >= VX_RELATIVE_FLOOR * m2.sqrt() {
        (p_as - vy * iy) / vx
    } else {
        (p_as * vx + q_as * vy) / m2
    };
    Ok(Phasor::new(ix, iy))
}

/// Line, transformer and auxiliary-system constants.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkParams {
    #[serde(default)]
    pub line: LineParams,
    #[serde(default)]
    pub transformer: TransformerParams,
    #[serde(default)]
    pub aux: AuxParams,
}

impl NetworkParams {
    /// Zero-impedance line, ideal transformer, no auxiliary load.
    pub fn identity() -> Self {
        Self {
            line: LineParams {
                z: Complex64::new(0.0, 0.0),
                y: Complex64::new(0.0, 0.0),
            },
            transformer: TransformerParams::ideal(),
            aux: AuxParams::none(),
        }
    }

    /// Composite map `(V_PMU, I_PMU) → (V_LV, I_LV)` at tap `tau`.
    pub fn pmu_to_lv(&self, tau: f64) -> Result<Transfer2> {
        Ok(self
            .transformer
            .with_tap(tau)
            .transfer()?
            .compose(&self.line.transfer()))
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = self.line.violations(&format!("{prefix}.line"));
        v.extend(self.transformer.violations(&format!("{prefix}.transformer")));
        v.extend(self.aux.violations(&format!("{prefix}.aux")));
        v
    }
}

/// Positive-sequence phasors reported at the substation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmuSample {
    pub t: f64,
    pub v: Phasor,
    pub i: Phasor,
    /// Tap value τ active at `t`.
    pub tap: f64,
}

/// Terminal measurements `y = [V_t, θ_t, I_t, φ_t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalMeasurement {
    pub t: f64,
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
    pub y4: f64,
}

impl TerminalMeasurement {
    pub fn from_phasors(t: f64, v: Phasor, i: Phasor) -> Self {
        let (y1, y2) = v.to_polar();
        let (y3, y4) = i.to_polar();
        Self { t, y1, y2, y3, y4 }
    }

    pub fn voltage(&self) -> Phasor {
        Phasor::from_polar(self.y1, self.y2)
    }

    pub fn current(&self) -> Phasor {
        Phasor::from_polar(self.y3, self.y4)
    }

    /// Terminal active and reactive power `V·conj(I)`.
    pub fn powers(&self) -> (f64, f64) {
        let d = self.y2 - self.y4;
        (self.y1 * self.y3 * d.cos(), self.y1 * self.y3 * d.sin())
    }
}

/// Streaming PMU → terminal mapper; holds the auxiliary running mean.
#[derive(Debug, Clone)]
pub struct TerminalMapper {
    net: NetworkParams,
    aux: AuxAverager,
    last_t: Option<f64>,
}

impl TerminalMapper {
    pub fn new(net: NetworkParams) -> Self {
        Self {
            aux: AuxAverager::new(net.aux),
            net,
            last_t: None,
        }
    }

    pub fn push(&mut self, s: &PmuSample) -> Result<TerminalMeasurement> {
        if let Some(tl) = self.last_t {
            if !(s.t > tl) {
                return Err(DseError::InvalidArgument(format!(
                    "timestamps not strictly increasing: {} after {tl}",
                    s.t
                )));
            }
        }
        let (v_hv, i_hv) = line_pmu_to_hv(s.v, s.i, &self.net.line);
        let (v_lv, i_lv) = transformer_hv_to_lv(v_hv, i_hv, &self.net.transformer.with_tap(s.tap))?;
        let p_lv = (v_lv.0 * i_lv.0.conj()).re;
        let (p_as, q_as) = self.aux.commit(s.t, p_lv)?;
        let i_as = if p_as == 0.0 && q_as == 0.0 {
            Phasor::ZERO
        } else {
            aux_current(p_as, q_as, v_lv)?
        };
        self.last_t = Some(s.t);
        Ok(TerminalMeasurement::from_phasors(s.t, v_lv, i_lv + i_as))
    }
}

/// Maps a PMU series to the generator terminal.
pub fn map_to_terminal(samples: &[PmuSample], np: &NetworkParams) -> Result<Vec<TerminalMeasurement>> {
    if samples.is_empty() {
        return Err(DseError::TooShort { need: 1, got: 0 });
    }
    let mut mapper = TerminalMapper::new(*np);
    samples
        .iter()
        .enumerate()
        .map(|(k, s)| mapper.push(s).map_err(|e| e.at(k)))
        .collect()
}

/// Streaming terminal → PMU mapper, the exact inverse of [`TerminalMapper`].
#[derive(Debug, Clone)]
pub struct InverseMapper {
    net: NetworkParams,
    aux: AuxAverager,
}

impl InverseMapper {
    pub fn new(net: NetworkParams) -> Self {
        Self {
            aux: AuxAverager::new(net.aux),
            net,
        }
    }

    pub fn push(&mut self, y: &TerminalMeasurement, tap: f64) -> Result<PmuSample> {
        let v_lv = y.voltage();
        let i_sg = y.current();
        let p_sg = (v_lv.0 * i_sg.0.conj()).re;
        let p_as = self.aux.p_as_from_generation(y.t, p_sg)?;
        let q_as = p_as * self.net.aux.q_per_p();
        let i_as = if p_as == 0.0 && q_as == 0.0 {
            Phasor::ZERO
        } else {
            aux_current(p_as, q_as, v_lv)?
        };
        let i_lv = i_sg - i_as;
        self.aux.commit(y.t, (v_lv.0 * i_lv.0.conj()).re)?;
        let inv = self.net.pmu_to_lv(tap)?.inverse()?;
        let (v, i) = inv.apply(v_lv, i_lv);
        Ok(PmuSample { t: y.t, v, i, tap })
    }
}

/// Maps terminal measurements back to the substation, one tap per sample.
pub fn inverse_map(terminal: &[TerminalMeasurement], taps: &[f64], np: &NetworkParams) -> Result<Vec<PmuSample>> {
    if terminal.len() != taps.len() {
        return Err(DseError::LengthMismatch {
            left: terminal.len(),
            right: taps.len(),
        });
    }
    let mut mapper = InverseMapper::new(*np);
    terminal
        .iter()
        .zip(taps)
        .enumerate()
        .map(|(k, (y, &tap))| mapper.push(y, tap).map_err(|e| e.at(k)))
        .collect()
}
