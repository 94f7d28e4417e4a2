//! Bound-constrained minimization by projected BFGS.
//!
//! Each iteration takes a quasi-Newton step on the variables that are not
//! pinned at an active bound and backtracks along the projection arc until
//! an Armijo condition holds.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy)]
pub struct BoxOptions {
    pub max_iter: usize,
    /// Stop when the projected-gradient infinity norm falls below this.
    pub gtol: f64,
    /// Stop when `|Δf| ≤ ftol·max(1, |f|)` for `stall_iters` consecutive iterations.
    pub ftol: f64,
    pub stall_iters: usize,
    pub max_backtracks: usize,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-8,
            ftol: 1e-12,
            stall_iters: 3,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoxResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| ((x[i] - g[i]).clamp(lo[i], hi[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

/// Minimizes `f` over the box `[lo, hi]`. `fg(x, g)` returns `f(x)` and
/// writes the gradient into `g`.
pub fn minimize<F>(mut fg: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &BoxOptions) -> BoxResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut evaluations = 1;
    let mut h = identity(n);
    let mut stall = 0;
    let mut converged = false;
    let mut iterations = 0;

    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut d = vec![0.0; n];

    while iterations < opts.max_iter {
        if !f.is_finite() {
            break;
        }
        if projected_gradient_norm(&x, &g, lo, hi) <= opts.gtol {
            converged = true;
            break;
        }
        iterations += 1;

        let active: Vec<bool> = (0..n)
            .map(|i| (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0))
            .collect();
        direction(&h, &g, &active, &mut d);
        let mut slope: f64 = (0..n).map(|i| d[i] * g[i]).sum();
        if !(slope < 0.0) {
            h = identity(n);
            direction(&h, &g, &active, &mut d);
            slope = (0..n).map(|i| d[i] * g[i]).sum();
            if !(slope < 0.0) {
                converged = true;
                break;
            }
        }

        let mut alpha = 1.0;
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..opts.max_backtracks {
            for i in 0..n {
                x_new[i] = x[i] + alpha * d[i];
            }
            project(&mut x_new, lo, hi);
            let decrease: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            f_new = fg(&x_new, &mut g_new);
            evaluations += 1;
            if f_new.is_finite() && f_new <= f + 1e-4 * decrease {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Nothing better along this arc. A fresh metric may still help once.
            if h != identity(n) {
                h = identity(n);
                continue;
            }
            converged = true;
            break;
        }

        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        bfgs_update(&mut h, &s, &y);

        let df = (f - f_new).abs();
        if df <= opts.ftol * f.abs().max(1.0) {
            stall += 1;
        } else {
            stall = 0;
        }
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_new;
        if stall >= opts.stall_iters {
            converged = true;
            break;
        }
    }

    BoxResult {
        x,
        f,
        iterations,
        evaluations,
        converged,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn direction(h: &[f64], g: &[f64], active: &[bool], d: &mut [f64]) {
    let n = g.len();
    for i in 0..n {
        if active[i] {
            d[i] = 0.0;
            continue;
        }
        let mut s = 0.0;
        for j in 0..n {
            if !active[j] {
                s += h[i * n + j] * g[j];
            }
        }
        d[i] = -s;
    }
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64]) {
    let n = s.len();
    let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
    let ss: f64 = s.iter().map(|a| a * a).sum();
    let yy: f64 = y.iter().map(|a| a * a).sum();
    if !(sy > 1e-12 * libm::sqrt(ss * yy)) {
        return;
    }
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    // H += (1 + ρ yᵀHy) ρ s sᵀ − ρ (Hy sᵀ + s yᵀH)
    let c = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unconstrained_rosenbrock() {
        let r = minimize(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            &BoxOptions::default(),
        );
        assert!(r.converged);
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(r.x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn active_bounds() {
        // Minimum of (x-2)² + (y+1)² on [0,1]² sits at (1, 0).
        let r = minimize(
            |x, g| {
                g[0] = 2.0 * (x[0] - 2.0);
                g[1] = 2.0 * (x[1] + 1.0);
                (x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2)
            },
            &[0.5, 0.5],
            &[0.0, 0.0],
            &[1.0, 1.0],
            &BoxOptions::default(),
        );
        assert!(r.converged);
        assert_eq!(r.x, vec![1.0, 0.0]);
    }

    #[test]
    fn never_worse_than_start() {
        let start = [0.3, -0.2, 0.9];
        let f = |x: &[f64]| -> f64 { x.iter().map(|v| libm::cos(3.0 * v) + v * v).sum() };
        let r = minimize(
            |x, g| {
                for i in 0..3 {
                    g[i] = -3.0 * libm::sin(3.0 * x[i]) + 2.0 * x[i];
                }
                f(x)
            },
            &start,
            &[-1.0; 3],
            &[1.0; 3],
            &BoxOptions::default(),
        );
        assert!(r.f <= f(&start));
    }
}
