//! Three-phase sample triples.

use std::f64::consts::TAU;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

/// 120 degrees.
pub const PHASE_SHIFT: f64 = TAU / 3.0;

/// One sample per phase. The unit (volts, amps, per-unit) depends on context.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThreePhase {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ThreePhase {
    pub const ZERO: ThreePhase = ThreePhase { a: 0.0, b: 0.0, c: 0.0 };

    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        ThreePhase { a, b, c }
    }

    pub const fn splat(v: f64) -> Self {
        ThreePhase { a: v, b: v, c: v }
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        ThreePhase { a: v[0], b: v[1], c: v[2] }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    /// Positive-sequence cosine set: `amp * cos(theta - k * 120deg)` for
    /// phases a, b, c.
    pub fn balanced(amp: f64, theta: f64) -> Self {
        ThreePhase {
            a: amp * theta.cos(),
            b: amp * (theta - PHASE_SHIFT).cos(),
            c: amp * (theta + PHASE_SHIFT).cos(),
        }
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        ThreePhase { a: f(self.a), b: f(self.b), c: f(self.c) }
    }

    pub fn zip_with(self, other: Self, f: impl Fn(f64, f64) -> f64) -> Self {
        ThreePhase { a: f(self.a, other.a), b: f(self.b, other.b), c: f(self.c, other.c) }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }

    pub fn sum(&self) -> f64 {
        self.a + self.b + self.c
    }

    pub fn norm_sq(&self) -> f64 {
        self.a * self.a + self.b * self.b + self.c * self.c
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs())
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> {
        self.to_array().into_iter()
    }
}

impl Index<usize> for ThreePhase {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.a,
            1 => &self.b,
            2 => &self.c,
            _ => panic!("phase index {i} out of range"),
        }
    }
}

impl IndexMut<usize> for ThreePhase {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        match i {
            0 => &mut self.a,
            1 => &mut self.b,
            2 => &mut self.c,
            _ => panic!("phase index {i} out of range"),
        }
    }
}

impl Add for ThreePhase {
    type Output = ThreePhase;
    fn add(self, o: ThreePhase) -> ThreePhase {
        ThreePhase { a: self.a + o.a, b: self.b + o.b, c: self.c + o.c }
    }
}

impl AddAssign for ThreePhase {
    fn add_assign(&mut self, o: ThreePhase) {
        *self = *self + o;
    }
}

impl Sub for ThreePhase {
    type Output = ThreePhase;
    fn sub(self, o: ThreePhase) -> ThreePhase {
        ThreePhase { a: self.a - o.a, b: self.b - o.b, c: self.c - o.c }
    }
}

impl Mul<f64> for ThreePhase {
    type Output = ThreePhase;
    fn mul(self, s: f64) -> ThreePhase {
        ThreePhase { a: self.a * s, b: self.b * s, c: self.c * s }
    }
}

impl Neg for ThreePhase {
    type Output = ThreePhase;
    fn neg(self) -> ThreePhase {
        self * -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_set_sums_to_zero() {
        for k in 0..20 {
            let x = ThreePhase::balanced(3.0, k as f64 * 0.37);
            assert!(x.sum().abs() < 1e-12);
            assert!((x.norm_sq() - 1.5 * 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn indexing_matches_fields() {
        let mut x = ThreePhase::new(1.0, 2.0, 3.0);
        x[1] = 5.0;
        assert_eq!(x.to_array(), [1.0, 5.0, 3.0]);
        assert_eq!(x[2], 3.0);
    }
}
