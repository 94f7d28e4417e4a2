//! Gauss-Hermite rules.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Largest supported rule.
pub const MAX_ORDER: usize = 50;

/// Physicists' Gauss-Hermite rule for the weight `exp(-x²)`.
///
/// `weights` are normalized to sum to one, so `Σ w_i f(√2·x_i)` is the
/// expectation of `f` under a standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteRule {
    pub abscissae: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HermiteRule {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("quadrature order must be at least 1".into()));
        }
        if order > MAX_ORDER {
            return Err(Error::Unsupported(format!(
                "Gauss-Hermite order {order} exceeds {MAX_ORDER}"
            )));
        }
        let (x, w) = hermite_roots(order);
        let total: f64 = w.iter().sum();
        let weights = w.iter().map(|v| v / total).collect();
        Ok(Self {
            abscissae: x,
            weights,
        })
    }

    pub fn order(&self) -> usize {
        self.abscissae.len()
    }

    /// Nodes scaled for a standard normal: `√2·x_i`.
    pub fn standard_normal_nodes(&self) -> Vec<f64> {
        self.abscissae
            .iter()
            .map(|x| core::f64::consts::SQRT_2 * x)
            .collect()
    }
}

// Newton iteration on the orthonormal Hermite recurrence, with the usual
// asymptotic starting guesses for the largest roots.
fn hermite_roots(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^(-1/4)
    let mut x = alloc::vec![0.0; n];
    let mut w = alloc::vec![0.0; n];
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => math::sqrt(2.0 * nf + 1.0) - 1.85575 * math::powf(2.0 * nf + 1.0, -0.16667),
            1 => z - 1.14 * math::powf(nf, 0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * math::sqrt(2.0 / (jf + 1.0)) * p2 - math::sqrt(jf / (jf + 1.0)) * p3;
            }
            pp = math::sqrt(2.0 * nf) * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // Ascending order.
    x.reverse();
    w.reverse();
    (x, w)
}
