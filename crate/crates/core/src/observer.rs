//! Immersion-and-invariance observer for the speed deviation.
//!
//! ```text
//! ẋI = −(θ̂1 + k)·(xI + k·x1) + θ̂2·(T_m − T_e)
//! x̂2 = xI + k·x1
//! ```
//!
//! The linear part is integrated with the trapezoidal rule, holding θ̂ fixed
//! over each step.

use crate::error::{DseError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverState {
    pub xi2: f64,
    pub x2_hat: f64,
}

/// Streaming observer holding the previous input sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IiObserver {
    k: f64,
    xi2: f64,
    x1: f64,
    u: f64,
}

impl IiObserver {
    /// Starts with `xI = −k·x1(0)`, i.e. `x̂2(0) = 0`.
    pub fn new(k: f64, x1: f64, torque_gap: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(DseError::InvalidArgument(format!("observer gain must be > 0, got {k}")));
        }
        Ok(Self {
            k,
            xi2: -k * x1,
            x1,
            u: torque_gap,
        })
    }

    pub fn state(&self) -> ObserverState {
        ObserverState {
            xi2: self.xi2,
            x2_hat: self.xi2 + self.k * self.x1,
        }
    }

    /// Advances by `dt` to the next sample `(x1, T_m − T_e)`.
    pub fn step(&mut self, x1: f64, torque_gap: f64, theta_hat: [f64; 2], dt: f64) -> ObserverState {
        let g = theta_hat[0] + self.k;
        let h = 0.5 * dt;
        let rhs = self.xi2 * (1.0 - h * g) + h * (-g * self.k * (self.x1 + x1) + theta_hat[1] * (self.u + torque_gap));
        self.xi2 = rhs / (1.0 + h * g);
        self.x1 = x1;
        self.u = torque_gap;
        self.state()
    }
}

/// One observer step from `(s, x1_prev, u_prev)` to the next sample.
#[allow(clippy::too_many_arguments)]
pub fn observer_step(
    s: ObserverState,
    x1_prev: f64,
    u_prev: f64,
    x1: f64,
    torque_gap: f64,
    theta_hat: [f64; 2],
    k: f64,
    dt: f64,
) -> Result<ObserverState> {
    if !(dt > 0.0) {
        return Err(DseError::InvalidArgument("dt must be > 0".into()));
    }
    let mut o = IiObserver::new(k, x1_prev, u_prev)?;
    o.xi2 = s.xi2;
    Ok(o.step(x1, torque_gap, theta_hat, dt))
}

/// Runs the observer over aligned series with a per-sample parameter
/// estimate. `theta_hat[k]` is used for the step from sample `k` to `k + 1`.
pub fn run_observer(x1: &[f64], torque_gap: &[f64], theta_hat: &[[f64; 2]], k: f64, dt: f64) -> Result<Vec<f64>> {
    let n = x1.len();
    if torque_gap.len() != n || theta_hat.len() != n {
        return Err(DseError::LengthMismatch {
            left: n,
            right: torque_gap.len().min(theta_hat.len()),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut obs = IiObserver::new(k, x1[0], torque_gap[0])?;
    let mut out = Vec::with_capacity(n);
    out.push(obs.state().x2_hat);
    for i in 1..n {
        out.push(obs.step(x1[i], torque_gap[i], theta_hat[i - 1], dt).x2_hat);
    }
    Ok(out)
}
