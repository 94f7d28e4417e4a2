//! Independent reference computations shared by the integration tests and
//! the acceptance run. Nothing here calls the library's integrators,
//! quadrature or entropy code.
#![allow(dead_code)]

use hpmri_oed::{AcquisitionDesign, InformationModel, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `Γ(a)` by the Lanczos approximation (g = 7, 9 terms).
pub fn gamma_fn(a: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if a < 0.5 {
        return std::f64::consts::PI / ((std::f64::consts::PI * a).sin() * gamma_fn(1.0 - a));
    }
    let x = a - 1.0;
    let mut s = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    let t = x + 7.5;
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * s
}

/// Pyruvate vascular input at `t`.
pub fn input(p: &ModelParams, t: f64) -> f64 {
    let s = t - p.t0;
    if s <= 0.0 {
        return 0.0;
    }
    p.sigma_p * s.powf(p.alpha_p - 1.0) * (-s / p.beta_p).exp()
        / (gamma_fn(p.alpha_p) * p.beta_p.powf(p.alpha_p))
}

fn rhs(p: &ModelParams, t: f64, y: [f64; 2]) -> [f64; 2] {
    let c = p.kve / p.nu_e;
    [
        -(1.0 / p.t1p + p.kpl + c) * y[0] + p.klp * y[1] + c * input(p, t),
        p.kpl * y[0] - (1.0 / p.t1l + p.klp) * y[1],
    ]
}

/// Cash-Karp embedded 4(5) pair with error-per-step control.
pub fn cash_karp<F>(f: F, t0: f64, t1: f64, mut y: [f64; 2], tol: f64) -> [f64; 2]
where
    F: Fn(f64, [f64; 2]) -> [f64; 2],
{
    const A: [[f64; 5]; 6] = [
        [0.0; 5],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
        [3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0, 0.0, 0.0],
        [-11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0, 0.0],
        [1631.0 / 55296.0, 175.0 / 512.0, 575.0 / 13824.0, 44275.0 / 110592.0, 253.0 / 4096.0],
    ];
    const C: [f64; 6] = [0.0, 0.2, 0.3, 0.6, 1.0, 0.875];
    const B5: [f64; 6] = [37.0 / 378.0, 0.0, 250.0 / 621.0, 125.0 / 594.0, 0.0, 512.0 / 1771.0];
    const B4: [f64; 6] = [
        2825.0 / 27648.0,
        0.0,
        18575.0 / 48384.0,
        13525.0 / 55296.0,
        277.0 / 14336.0,
        0.25,
    ];
    let mut t = t0;
    let mut h = ((t1 - t0) / 50.0).max(1e-12);
    while t < t1 {
        h = h.min(t1 - t);
        let mut k = [[0.0; 2]; 6];
        for s in 0..6 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                ys[0] += h * A[s][j] * kj[0];
                ys[1] += h * A[s][j] * kj[1];
            }
            k[s] = f(t + C[s] * h, ys);
        }
        let mut y5 = y;
        let mut err = 0.0f64;
        for d in 0..2 {
            let mut hi = 0.0;
            let mut lo = 0.0;
            for s in 0..6 {
                hi += B5[s] * k[s][d];
                lo += B4[s] * k[s][d];
            }
            y5[d] += h * hi;
            err = err.max((h * (hi - lo)).abs() / (1.0 + y5[d].abs()));
        }
        if err <= tol {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 4.0 } else { 0.9 * (tol / err).powf(0.2) };
        h *= factor.clamp(0.2, 4.0);
    }
    y
}

/// Signals of the two-compartment model by direct integration of the ODE
/// between scans. The input's kink at the arrival time is a breakpoint.
pub fn lf_oracle(p: &ModelParams, design: &AcquisitionDesign) -> (Vec<f64>, Vec<f64>) {
    let times = design.scan_times();
    let (tp, tl) = (design.theta_p(), design.theta_l());
    let mut y = [0.0, 0.0];
    let mut sp = Vec::new();
    let mut sl = Vec::new();
    for k in 0..times.len() {
        sp.push(tp[k].sin() * (p.nu_e * y[0] + (1.0 - p.nu_e) * input(p, times[k])));
        sl.push(tl[k].sin() * p.nu_e * y[1]);
        if k + 1 == times.len() {
            break;
        }
        y = [tp[k].cos() * y[0], tl[k].cos() * y[1]];
        let (a, b) = (times[k], times[k + 1]);
        let f = |t: f64, y: [f64; 2]| rhs(p, t, y);
        if a < p.t0 && p.t0 < b {
            y = cash_karp(f, a, p.t0, y, 1e-13);
            y = cash_karp(f, p.t0, b, y, 1e-13);
        } else {
            y = cash_karp(f, a, b, y, 1e-13);
        }
    }
    (sp, sl)
}

/// Monte-Carlo entropy of the Gaussian mixture `Σ w_m N(c_m, σ²)`:
/// returns the estimate and its standard error.
pub fn mc_mixture_entropy(centers: &[f64], weights: &[f64], sigma: f64, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().unwrap();
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let u: f64 = rng.random::<f64>() * total;
        let m = cumulative.partition_point(|&c| c < u).min(centers.len() - 1);
        let e: f64 = StandardNormal.sample(&mut rng);
        let z = centers[m] + sigma * e;
        let density: f64 = centers
            .iter()
            .zip(weights)
            .map(|(c, w)| {
                let d = (z - c) / sigma;
                w * (-0.5 * d * d).exp()
            })
            .sum::<f64>()
            * norm
            / total;
        let v = -density.ln();
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Best constant angle pair on an integer-degree grid over `[0, 90]²`.
pub fn brute_force_constant(model: &InformationModel, step_deg: f64) -> (f64, f64, f64) {
    let n = (90.0 / step_deg).round() as usize;
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    for i in 0..=n {
        for j in 0..=n {
            let (p, l) = (i as f64 * step_deg, j as f64 * step_deg);
            let mi = model.mi_constant(p.to_radians(), l.to_radians());
            if mi > best.2 {
                best = (p, l, mi);
            }
        }
    }
    best
}

/// Central-difference gradient of `f` at `x`.
pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Random schedule with both angles inside `[lo, hi]` degrees, in radians.
pub fn random_schedule(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let mut draw = || (lo + (hi - lo) * rng.random::<f64>()).to_radians();
    let p: Vec<f64> = (0..n).map(|_| draw()).collect();
    let l: Vec<f64> = (0..n).map(|_| draw()).collect();
    (p, l)
}
