//! Complex per-unit phasors, symmetrical components and the rotor dq frame.
//!
//! Angles are radians everywhere in this crate. Principal angles lie in
//! (−π, π]. The dq convention follows the stator equation of the flux-decay
//! model: a phasor `mag∠angle` seen from a rotor at angle `x1` decomposes as
//! `mag·e^{j·angle} = (d + jq)·e^{j(x1 − π/2)}`, i.e.
//! `d = mag·sin(x1 − angle)` and `q = mag·cos(x1 − angle)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

/// Wraps an angle into (−π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

/// A per-unit phasor in rectangular form.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Phasor(pub Complex64);

impl Phasor {
    pub const ZERO: Phasor = Phasor(Complex64::new(0.0, 0.0));

    pub fn new(re: f64, im: f64) -> Self {
        Phasor(Complex64::new(re, im))
    }

    pub fn from_polar(magnitude: f64, angle: f64) -> Self {
        Phasor(Complex64::from_polar(magnitude, angle))
    }

    pub fn re(self) -> f64 {
        self.0.re
    }

    pub fn im(self) -> f64 {
        self.0.im
    }

    pub fn magnitude(self) -> f64 {
        self.0.norm()
    }

    /// Principal argument in (−π, π].
    pub fn angle(self) -> f64 {
        normalize_angle(self.0.im.atan2(self.0.re))
    }

    pub fn to_polar(self) -> (f64, f64) {
        (self.magnitude(), self.angle())
    }

    pub fn conj(self) -> Self {
        Phasor(self.0.conj())
    }

    pub fn complex(self) -> Complex64 {
        self.0
    }
}

impl From<Complex64> for Phasor {
    fn from(c: Complex64) -> Self {
        Phasor(c)
    }
}

impl From<Phasor> for Complex64 {
    fn from(p: Phasor) -> Self {
        p.0
    }
}

impl Add for Phasor {
    type Output = Phasor;
    fn add(self, rhs: Phasor) -> Phasor {
        Phasor(self.0 + rhs.0)
    }
}

impl Sub for Phasor {
    type Output = Phasor;
    fn sub(self, rhs: Phasor) -> Phasor {
        Phasor(self.0 - rhs.0)
    }
}

impl Neg for Phasor {
    type Output = Phasor;
    fn neg(self) -> Phasor {
        Phasor(-self.0)
    }
}

impl Mul for Phasor {
    type Output = Phasor;
    fn mul(self, rhs: Phasor) -> Phasor {
        Phasor(self.0 * rhs.0)
    }
}

impl Mul<Complex64> for Phasor {
    type Output = Phasor;
    fn mul(self, rhs: Complex64) -> Phasor {
        Phasor(self.0 * rhs)
    }
}

impl Mul<f64> for Phasor {
    type Output = Phasor;
    fn mul(self, rhs: f64) -> Phasor {
        Phasor(self.0 * rhs)
    }
}

impl Div for Phasor {
    type Output = Phasor;
    fn div(self, rhs: Phasor) -> Phasor {
        Phasor(self.0 / rhs.0)
    }
}

/// Phase a, b, c phasors of a three-phase quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreePhasePhasors {
    pub a: Phasor,
    pub b: Phasor,
    pub c: Phasor,
}

/// The Fortescue operator α = e^{j2π/3}.
pub fn alpha() -> Complex64 {
    Complex64::from_polar(1.0, TAU / 3.0)
}

/// Positive-sequence component (a + α·b + α²·c)/3.
pub fn positive_sequence(v: &ThreePhasePhasors) -> Phasor {
    let a = alpha();
    Phasor((v.a.0 + a * v.b.0 + a * a * v.c.0) / 3.0)
}

/// Negative-sequence component (a + α²·b + α·c)/3.
pub fn negative_sequence(v: &ThreePhasePhasors) -> Phasor {
    let a = alpha();
    Phasor((v.a.0 + a * a * v.b.0 + a * v.c.0) / 3.0)
}

/// Zero-sequence component (a + b + c)/3.
pub fn zero_sequence(v: &ThreePhasePhasors) -> Phasor {
    Phasor((v.a.0 + v.b.0 + v.c.0) / 3.0)
}

/// Ratio |negative| + |zero| over |positive|, reported as an imbalance
/// diagnostic. Infinite when the positive sequence vanishes.
pub fn imbalance_ratio(v: &ThreePhasePhasors) -> f64 {
    let pos = positive_sequence(v).magnitude();
    let rest = negative_sequence(v).magnitude() + zero_sequence(v).magnitude();
    if pos == 0.0 {
        f64::INFINITY
    } else {
        rest / pos
    }
}

/// Projects `mag∠angle` onto the rotor dq axes for rotor angle `x1`.
pub fn dq_decompose(mag: f64, angle: f64, x1: f64) -> (f64, f64) {
    let diff = x1 - angle;
    (mag * diff.sin(), mag * diff.cos())
}

/// Inverse of [`dq_decompose`]: `(d + jq)·e^{j(x1 − π/2)}`.
pub fn dq_compose(d: f64, q: f64, x1: f64) -> Phasor {
    Phasor(Complex64::new(d, q) * Complex64::from_polar(1.0, x1 - FRAC_PI_2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Phasor, b: Phasor, tol: f64) -> bool {
        (a.0 - b.0).norm() <= tol
    }

    #[test]
    fn balanced_set_is_pure_positive_sequence() {
        let v = Phasor::from_polar(1.03, 0.2);
        let set = ThreePhasePhasors {
            a: v,
            b: Phasor::from_polar(1.03, 0.2 - TAU / 3.0),
            c: Phasor::from_polar(1.03, 0.2 + TAU / 3.0),
        };
        assert!(close(positive_sequence(&set), v, 1e-14));
        assert!(negative_sequence(&set).magnitude() < 1e-14);
    }

    #[test]
    fn identical_phasors_are_zero_sequence() {
        let v = Phasor::from_polar(0.7, -1.1);
        let set = ThreePhasePhasors { a: v, b: v, c: v };
        assert!(positive_sequence(&set).magnitude() < 1e-15);
        assert!(close(zero_sequence(&set), v, 1e-15));
    }

    #[test]
    fn single_phase_gives_one_third() {
        let set = ThreePhasePhasors {
            a: Phasor::new(1.0, 0.0),
            b: Phasor::ZERO,
            c: Phasor::ZERO,
        };
        let ps = positive_sequence(&set);
        assert!((ps.re() - 1.0 / 3.0).abs() < 1e-15);
        assert!(ps.im().abs() < 1e-15);
    }

    #[test]
    fn dq_examples() {
        let (d, q) = dq_decompose(1.0, 0.0, FRAC_PI_2);
        assert!((d - 1.0).abs() < 1e-15 && q.abs() < 1e-15);
        let (d, q) = dq_decompose(1.0, 0.37, 0.37);
        assert!(d.abs() < 1e-15 && (q - 1.0).abs() < 1e-15);
        let (d, q) = dq_decompose(0.8, 0.3, 0.7);
        assert!((d - 0.8 * 0.4f64.sin()).abs() < 1e-15);
        assert!((q - 0.8 * 0.4f64.cos()).abs() < 1e-15);
        assert!(close(dq_compose(d, q, 0.7), Phasor::from_polar(0.8, 0.3), 1e-12));
    }

    #[test]
    fn normalize_is_half_open() {
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(0.5 + 4.0 * TAU) - 0.5).abs() < 1e-12);
        assert_eq!(Phasor::new(-1.0, -0.0).angle(), PI);
    }

    fn fortescue_inverse(p: Phasor, n: Phasor, z: Phasor) -> ThreePhasePhasors {
        // a = z + p + n, b = z + α²p + αn, c = z + αp + α²n
        let a = alpha();
        ThreePhasePhasors {
            a: Phasor(z.0 + p.0 + n.0),
            b: Phasor(z.0 + a * a * p.0 + a * n.0),
            c: Phasor(z.0 + a * p.0 + a * a * n.0),
        }
    }

    fn arb_phasor() -> impl Strategy<Value = Phasor> {
        (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(r, i)| Phasor::new(r, i))
    }

    proptest! {
        #[test]
        fn polar_round_trip(mag in 1e-6f64..10.0, ang in -3.0f64..3.0) {
            let p = Phasor::from_polar(mag, ang);
            let (m2, a2) = p.to_polar();
            prop_assert!((m2 - mag).abs() <= 1e-12 * mag);
            prop_assert!((a2 - ang).abs() <= 1e-12 * ang.abs().max(1.0));
        }

        #[test]
        fn recomposition_identity(mag in 0.0f64..5.0, ang in -10.0f64..10.0, x1 in -10.0f64..10.0) {
            let (d, q) = dq_decompose(mag, ang, x1);
            let back = dq_compose(d, q, x1);
            prop_assert!((back.0 - Phasor::from_polar(mag, ang).0).norm() < 1e-12 * mag.max(1.0));
        }

        #[test]
        fn positive_sequence_is_linear(a in arb_phasor(), b in arb_phasor(), c in arb_phasor(),
                                        d in arb_phasor(), e in arb_phasor(), f in arb_phasor(),
                                        k in arb_phasor()) {
            let u = ThreePhasePhasors { a, b, c };
            let v = ThreePhasePhasors { a: d, b: e, c: f };
            let sum = ThreePhasePhasors { a: a + d, b: b + e, c: c + f };
            let lhs = positive_sequence(&sum);
            let rhs = positive_sequence(&u) + positive_sequence(&v);
            prop_assert!((lhs.0 - rhs.0).norm() < 1e-12);
            let scaled = ThreePhasePhasors { a: a * k, b: b * k, c: c * k };
            let l2 = positive_sequence(&scaled);
            let r2 = positive_sequence(&u) * k;
            prop_assert!((l2.0 - r2.0).norm() < 1e-12);
        }

        #[test]
        fn fortescue_completeness(a in arb_phasor(), b in arb_phasor(), c in arb_phasor()) {
            let v = ThreePhasePhasors { a, b, c };
            let back = fortescue_inverse(positive_sequence(&v), negative_sequence(&v), zero_sequence(&v));
            prop_assert!((back.a.0 - a.0).norm() < 1e-10);
            prop_assert!((back.b.0 - b.0).norm() < 1e-10);
            prop_assert!((back.c.0 - c.0).norm() < 1e-10);
        }
    }
}
