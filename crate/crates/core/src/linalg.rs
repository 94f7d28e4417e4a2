//! Fixed-size 2×2 linear algebra for the two-species exchange model.

use core::ops::{Add, Mul, Sub};

use crate::math;

pub type Vec2 = [f64; 2];

/// Row-major 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub const ZERO: Mat2 = Mat2 {
        m: [[0.0, 0.0], [0.0, 0.0]],
    };

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { m: [[a, b], [c, d]] }
    }

    pub const fn diag(a: f64, d: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, d)
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn transpose(&self) -> Self {
        Mat2::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn scale(&self, s: f64) -> Self {
        Mat2::new(
            s * self.m[0][0],
            s * self.m[0][1],
            s * self.m[1][0],
            s * self.m[1][1],
        )
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let r0 = self.m[0][0].abs() + self.m[0][1].abs();
        let r1 = self.m[1][0].abs() + self.m[1][1].abs();
        r0.max(r1)
    }

    /// Matrix exponential `exp(t·A)`.
    ///
    /// Uses the closed-form spectral expression whenever the eigenvalues of
    /// `t·A` are separated by more than `1e-12`, and scaling-and-squaring of
    /// a Taylor series otherwise.
    pub fn expm(&self, t: f64) -> Mat2 {
        let a = self.scale(t);
        let half_tr = 0.5 * a.trace();
        // Eigenvalues are half_tr ± sqrt(disc).
        let shifted = a - Mat2::IDENTITY.scale(half_tr);
        let disc = -shifted.det();
        let gap = 2.0 * math::sqrt(disc.abs());
        if gap <= 1e-12 {
            return expm_taylor(&a);
        }
        let s = math::sqrt(disc.abs());
        // exp(A) = e^m [c(s) I + f(s) (A - m I)], c = cosh/cos, f = sinh(s)/s or sin(s)/s.
        let (c, f) = if disc > 0.0 {
            (math::cosh(s), sinhc(s))
        } else {
            (math::cos(s), sinc(s))
        };
        let e = math::exp(half_tr);
        (Mat2::IDENTITY.scale(c) + shifted.scale(f)).scale(e)
    }
}

fn sinhc(s: f64) -> f64 {
    if s < 1e-4 {
        1.0 + s * s / 6.0
    } else {
        math::sinh(s) / s
    }
}

fn sinc(s: f64) -> f64 {
    if s < 1e-4 {
        1.0 - s * s / 6.0
    } else {
        math::sin(s) / s
    }
}

fn expm_taylor(a: &Mat2) -> Mat2 {
    let norm = a.norm_inf();
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (math::ceil(math::log2(norm / 0.5)) as i64).max(0) as u32;
    }
    let scaled = a.scale(1.0 / (1u64 << squarings.min(62)) as f64);
    let mut term = Mat2::IDENTITY;
    let mut sum = Mat2::IDENTITY;
    for j in 1..=18 {
        term = (term * scaled).scale(1.0 / j as f64);
        sum = sum + term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, o: Mat2) -> Mat2 {
        let a = &self.m;
        let b = &o.m;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

impl Add for Mat2 {
    type Output = Mat2;

    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m[0][0] + o.m[0][0],
            self.m[0][1] + o.m[0][1],
            self.m[1][0] + o.m[1][0],
            self.m[1][1] + o.m[1][1],
        )
    }
}

impl Sub for Mat2 {
    type Output = Mat2;

    fn sub(self, o: Mat2) -> Mat2 {
        self + o.scale(-1.0)
    }
}
