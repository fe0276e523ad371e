//! Reference-frame transforms and angle utilities.
//!
//! Clarke uses the amplitude-invariant scaling, so a balanced set with
//! 1 pu phase peak maps to a unit α-β vector. Park rotates by `-θ`:
//! `d + jq = (α + jβ) e^{-jθ}`.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThreePhase {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Two-axis vector in the stationary frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlphaBeta {
    pub alpha: f64,
    pub beta: f64,
}

/// Two-axis vector in the rotating frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Dq {
    pub d: f64,
    pub q: f64,
}

/// Angle in radians, always held in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct Angle(f64);

impl Angle {
    pub const ZERO: Angle = Angle(0.0);

    pub fn new(radians: f64) -> Self {
        wrap_angle(radians)
    }

    pub fn from_degrees(deg: f64) -> Self {
        wrap_angle(deg.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// Wrapped difference `self - other`.
    pub fn diff(self, other: Angle) -> Angle {
        wrap_angle(self.0 - other.0)
    }
}

/// Reduce `x` to the canonical range `[-π, π)`.
pub fn wrap_angle(x: f64) -> Angle {
    let mut r = (x + PI).rem_euclid(TAU);
    if r >= TAU {
        r = 0.0;
    }
    Angle(r - PI)
}

impl AlphaBeta {
    pub const ZERO: AlphaBeta = AlphaBeta {
        alpha: 0.0,
        beta: 0.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn from_polar(magnitude: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(magnitude * c, magnitude * s)
    }

    pub fn norm(self) -> f64 {
        self.alpha.hypot(self.beta)
    }

    /// Multiply by the complex number `re + j·im`.
    pub fn rotate_scale(self, re: f64, im: f64) -> Self {
        Self::new(
            re * self.alpha - im * self.beta,
            re * self.beta + im * self.alpha,
        )
    }

    pub fn is_finite(self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite()
    }
}

impl Dq {
    pub const ZERO: Dq = Dq { d: 0.0, q: 0.0 };

    pub fn new(d: f64, q: f64) -> Self {
        Self { d, q }
    }

    pub fn from_polar(magnitude: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(magnitude * c, magnitude * s)
    }

    pub fn norm(self) -> f64 {
        self.d.hypot(self.q)
    }

    /// Multiply by the complex number `re + j·im`.
    pub fn rotate_scale(self, re: f64, im: f64) -> Self {
        Self::new(re * self.d - im * self.q, re * self.q + im * self.d)
    }
}

macro_rules! vector_ops {
    ($t:ident, $x:ident, $y:ident) => {
        impl Add for $t {
            type Output = $t;
            fn add(self, o: $t) -> $t {
                $t::new(self.$x + o.$x, self.$y + o.$y)
            }
        }
        impl Sub for $t {
            type Output = $t;
            fn sub(self, o: $t) -> $t {
                $t::new(self.$x - o.$x, self.$y - o.$y)
            }
        }
        impl Neg for $t {
            type Output = $t;
            fn neg(self) -> $t {
                $t::new(-self.$x, -self.$y)
            }
        }
        impl Mul<f64> for $t {
            type Output = $t;
            fn mul(self, k: f64) -> $t {
                $t::new(self.$x * k, self.$y * k)
            }
        }
    };
}

vector_ops!(AlphaBeta, alpha, beta);
vector_ops!(Dq, d, q);

pub fn clarke(v: ThreePhase) -> AlphaBeta {
    AlphaBeta::new(
        (2.0 / 3.0) * (v.a - 0.5 * v.b - 0.5 * v.c),
        (v.b - v.c) / SQRT3,
    )
}

pub fn inv_clarke(v: AlphaBeta) -> ThreePhase {
    let h = 0.5 * SQRT3 * v.beta;
    ThreePhase {
        a: v.alpha,
        b: -0.5 * v.alpha + h,
        c: -0.5 * v.alpha - h,
    }
}

pub fn park(v: AlphaBeta, theta: Angle) -> Dq {
    let (s, c) = theta.radians().sin_cos();
    Dq::new(v.alpha * c + v.beta * s, -v.alpha * s + v.beta * c)
}

pub fn inv_park(v: Dq, theta: Angle) -> AlphaBeta {
    let (s, c) = theta.radians().sin_cos();
    AlphaBeta::new(v.d * c - v.q * s, v.d * s + v.q * c)
}

/// Four-quadrant angle of an α-β vector.
pub fn phase_of(v: AlphaBeta) -> Result<Angle> {
    if v.alpha == 0.0 && v.beta == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    Ok(wrap_angle(v.beta.atan2(v.alpha)))
}
