//! Small dense Levenberg-Marquardt with box constraints.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmSettings {
    pub max_iter: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
}

pub(crate) struct LmOutcome {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Solves the symmetric positive definite system `a·x = b` in place by
/// Cholesky; returns false if `a` is not numerically positive definite.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = libm::sqrt(d);
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    true
}

/// Minimizes `½‖r(x)‖²` over `[lo, hi]`. `residuals` returns `None` when
/// the model cannot be evaluated at `x`; such points are rejected.
pub(crate) fn minimize<F>(
    mut residuals: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    settings: &LmSettings,
) -> Option<LmOutcome>
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let p = x0.len();
    let mut x: Vec<f64> = (0..p).map(|i| x0[i].clamp(lo[i], hi[i])).collect();
    let mut r = residuals(&x)?;
    let m = r.len();
    let mut cost = sum_sq(&r);
    let mut lambda = 1e-3;
    let mut jac = vec![0.0; m * p];
    let mut iterations = 0;
    let mut converged = false;

    'outer: while iterations < settings.max_iter {
        if cost == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;

        // Central differences, one-sided when a bound is within reach.
        for j in 0..p {
            let h = settings.fd_step * x[j].abs().max(1e-3);
            let up = (x[j] + h).min(hi[j]);
            let dn = (x[j] - h).max(lo[j]);
            let mut xp = x.clone();
            xp[j] = up;
            let mut xm = x.clone();
            xm[j] = dn;
            let (rp, rm) = match (residuals(&xp), residuals(&xm)) {
                (Some(a), Some(b)) => (a, b),
                _ => break 'outer,
            };
            let width = up - dn;
            for i in 0..m {
                jac[i * p + j] = (rp[i] - rm[i]) / width;
            }
        }

        let mut g = vec![0.0; p];
        let mut h = vec![0.0; p * p];
        for i in 0..m {
            for a in 0..p {
                g[a] += jac[i * p + a] * r[i];
                for b in 0..p {
                    h[a * p + b] += jac[i * p + a] * jac[i * p + b];
                }
            }
        }

        let free: Vec<usize> = (0..p)
            .filter(|&j| !((x[j] <= lo[j] && g[j] > 0.0) || (x[j] >= hi[j] && g[j] < 0.0)))
            .collect();
        let pg = free.iter().map(|&j| g[j].abs()).fold(0.0, f64::max);
        if free.is_empty() || pg <= settings.gtol {
            converged = true;
            break;
        }
        let nf = free.len();
        let diag_max = free.iter().map(|&j| h[j * p + j]).fold(0.0, f64::max);

        loop {
            let mut a = vec![0.0; nf * nf];
            let mut b = vec![0.0; nf];
            for (ia, &ja) in free.iter().enumerate() {
                b[ia] = -g[ja];
                for (ib, &jb) in free.iter().enumerate() {
                    a[ia * nf + ib] = h[ja * p + jb];
                }
                let d = h[ja * p + ja].max(1e-12 * diag_max).max(1e-300);
                a[ia * nf + ia] += lambda * d;
            }
            let solved = cholesky_solve(&mut a, &mut b, nf);
            if solved {
                let mut x_new = x.clone();
                for (ia, &ja) in free.iter().enumerate() {
                    x_new[ja] = (x[ja] + b[ia]).clamp(lo[ja], hi[ja]);
                }
                if let Some(r_new) = residuals(&x_new) {
                    let cost_new = sum_sq(&r_new);
                    if cost_new < cost {
                        let step: f64 = (0..p).map(|j| (x_new[j] - x[j]).abs()).fold(0.0, f64::max);
                        let scale: f64 = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
                        let small_f = cost - cost_new <= settings.ftol * cost;
                        let small_x = step <= settings.xtol * (scale + settings.xtol);
                        x = x_new;
                        r = r_new;
                        cost = cost_new;
                        lambda = (lambda / 3.0).max(1e-12);
                        if small_f || small_x {
                            converged = true;
                            break 'outer;
                        }
                        break;
                    }
                }
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                // No decrease is resolvable from here.
                converged = true;
                break 'outer;
            }
        }
    }

    Some(LmOutcome {
        x,
        cost,
        iterations,
        converged,
    })
}
