//! Uniformly sampled, timestamped sequences shared by every pipeline stage.

use crate::error::{DseError, Result};

/// Relative tolerance on sample spacing when checking uniformity.
pub const UNIFORM_TOLERANCE: f64 = 1e-3;

/// A timestamped sequence of records.
///
/// Timestamps are strictly increasing. Most stages additionally expect
/// uniform spacing; use [`TimeSeries::sample_period`] to obtain and check it.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<T> {
    pub t: Vec<f64>,
    pub values: Vec<T>,
}

impl<T> Default for TimeSeries<T> {
    fn default() -> Self {
        Self {
            t: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T> TimeSeries<T> {
    pub fn new(t: Vec<f64>, values: Vec<T>) -> Result<Self> {
        if t.len() != values.len() {
            return Err(DseError::LengthMismatch {
                left: t.len(),
                right: values.len(),
            });
        }
        for (k, w) in t.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(DseError::InvalidArgument(format!(
                    "timestamps not strictly increasing at index {}",
                    k + 1
                )));
            }
        }
        Ok(Self { t, values })
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            t: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, t: f64, value: T) {
        self.t.push(t);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &T)> {
        self.t.iter().copied().zip(self.values.iter())
    }

    /// Mean sample period; errors if spacing deviates from uniform by more
    /// than [`UNIFORM_TOLERANCE`] (relative).
    pub fn sample_period(&self) -> Result<f64> {
        if self.len() < 2 {
            return Err(DseError::TooShort {
                need: 2,
                got: self.len(),
            });
        }
        let n = self.len();
        let dt = (self.t[n - 1] - self.t[0]) / (n - 1) as f64;
        for (k, w) in self.t.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > UNIFORM_TOLERANCE * dt {
                return Err(DseError::InvalidArgument(format!(
                    "non-uniform sampling at index {}: step {} vs mean {}",
                    k + 1,
                    w[1] - w[0],
                    dt
                )));
            }
        }
        Ok(dt)
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> TimeSeries<U> {
        TimeSeries {
            t: self.t.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }

    /// Index of the first sample with `t >= time` (or `len()` if none).
    pub fn index_at(&self, time: f64) -> usize {
        self.t.partition_point(|&s| s < time)
    }
}

/// Checks two series share a time base (same length).
pub fn check_aligned<A, B>(a: &TimeSeries<A>, b: &TimeSeries<B>) -> Result<()> {
    if a.len() != b.len() {
        return Err(DseError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Removes 2π jumps between consecutive samples so that the returned
/// sequence changes by less than π per step.
pub fn unwrap_angles(angles: &[f64]) -> Vec<f64> {
    use std::f64::consts::{PI, TAU};
    let mut out = Vec::with_capacity(angles.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &a in angles {
        if let Some(p) = prev {
            let mut d = a + offset - p;
            while d > PI {
                offset -= TAU;
                d -= TAU;
            }
            while d <= -PI {
                offset += TAU;
                d += TAU;
            }
        }
        let v = a + offset;
        out.push(v);
        prev = Some(v);
    }
    out
}

/// Central-difference derivative, one-sided (second order) at the ends.
pub fn derivative(values: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 3 {
        return Err(DseError::TooShort { need: 3, got: n });
    }
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt);
    for k in 1..n - 1 {
        d[k] = (values[k + 1] - values[k - 1]) / (2.0 * dt);
    }
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dt);
    Ok(d)
}
