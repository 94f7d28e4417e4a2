use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::{InformationModel, MiResult};
use crate::boxopt::{self, BoxOptions};
use crate::error::{invalid, Result};
use crate::kinetics::AcquisitionDesign;
use crate::par;

/// Flip-angle limits in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleBounds {
    pub theta_p: (f64, f64),
    pub theta_l: (f64, f64),
}

impl Default for AngleBounds {
    fn default() -> Self {
        Self {
            theta_p: (0.0, 90.0),
            theta_l: (0.0, 90.0),
        }
    }
}

impl AngleBounds {
    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.theta_p, self.theta_l] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi <= 90.0) {
                return Err(invalid("angle bounds must satisfy 0 <= lo <= hi <= 90 degrees"));
            }
        }
        Ok(())
    }

    fn radians(&self) -> ([f64; 2], [f64; 2]) {
        (
            [self.theta_p.0.to_radians(), self.theta_l.0.to_radians()],
            [self.theta_p.1.to_radians(), self.theta_l.1.to_radians()],
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizeOptions {
    /// Coarse grid points per angle for the constant-angle multi-start.
    pub grid_points: usize,
    /// Random restarts around the initial schedule in the varying case.
    pub perturbations: usize,
    /// Half-width of the uniform restart perturbation, degrees.
    pub perturbation_deg: f64,
    pub seed: u64,
    pub local: BoxOptions,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            grid_points: 5,
            perturbations: 3,
            perturbation_deg: 10.0,
            seed: 0,
            local: BoxOptions::default(),
        }
    }
}

/// Best design found and how the search ended.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptimum {
    pub result: MiResult,
    /// Whether the local run that produced the optimum met its stopping test.
    pub converged: bool,
    pub starts: usize,
    pub iterations: usize,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn pick_best(runs: Vec<boxopt::BoxResult>) -> boxopt::BoxResult {
    let mut best: Option<boxopt::BoxResult> = None;
    for r in runs {
        if best.as_ref().is_none_or(|b| r.f < b.f) {
            best = Some(r);
        }
    }
    best.expect("at least one start")
}

/// Best single angle pair applied at every scan.
///
/// Local quasi-Newton runs start from every point of a coarse grid spanning
/// the bounds; the best endpoint wins.
pub fn optimize_constant_flip(
    model: &InformationModel,
    bounds: &AngleBounds,
    opts: &OptimizeOptions,
) -> Result<DesignOptimum> {
    bounds.validate()?;
    if opts.grid_points == 0 {
        return Err(invalid("grid_points must be at least 1"));
    }
    let (lo, hi) = bounds.radians();
    let n = model.scans();
    let ps = linspace(lo[0], hi[0], opts.grid_points);
    let ls = linspace(lo[1], hi[1], opts.grid_points);
    let starts: Vec<[f64; 2]> = ps
        .iter()
        .flat_map(|&p| ls.iter().map(move |&l| [p, l]))
        .collect();

    let objective = |x: &[f64], g: &mut [f64]| {
        let tp = vec![x[0]; n];
        let tl = vec![x[1]; n];
        let mut gp = vec![0.0; n];
        let mut gl = vec![0.0; n];
        let mi = model.mi_gradient(&tp, &tl, &mut gp, &mut gl);
        g[0] = -gp.iter().sum::<f64>();
        g[1] = -gl.iter().sum::<f64>();
        -mi
    };
    let runs = par::map_indexed(starts.len(), |i| {
        boxopt::minimize(objective, &starts[i], &lo, &hi, &opts.local)
    });
    let iterations = runs.iter().map(|r| r.iterations).sum();
    let best = pick_best(runs);
    let design = AcquisitionDesign::from_radians(
        model.repetition_times().to_vec(),
        vec![best.x[0]; n],
        vec![best.x[1]; n],
    )?;
    Ok(DesignOptimum {
        result: model.evaluate(&design)?,
        converged: best.converged,
        starts: starts.len(),
        iterations,
    })
}

/// Best per-scan schedule.
///
/// Starts from `init` (default: the constant-angle optimum) plus seeded
/// uniform perturbations of it, so the result is never worse than `init`.
pub fn optimize_varying_flip(
    model: &InformationModel,
    bounds: &AngleBounds,
    init: Option<&AcquisitionDesign>,
    opts: &OptimizeOptions,
) -> Result<DesignOptimum> {
    bounds.validate()?;
    let n = model.scans();
    let init = match init {
        Some(d) => {
            if d.repetition_times() != model.repetition_times() {
                return Err(invalid("initial schedule timing differs from the model"));
            }
            d.clone()
        }
        None => optimize_constant_flip(model, bounds, opts)?.result.design,
    };
    let (blo, bhi) = bounds.radians();
    let mut lo = vec![blo[0]; n];
    lo.extend(core::iter::repeat_n(blo[1], n));
    let mut hi = vec![bhi[0]; n];
    hi.extend(core::iter::repeat_n(bhi[1], n));

    let mut x0: Vec<f64> = init.theta_p().to_vec();
    x0.extend_from_slice(init.theta_l());
    for i in 0..2 * n {
        x0[i] = x0[i].clamp(lo[i], hi[i]);
    }
    let mut starts = vec![x0.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let delta = opts.perturbation_deg.abs().to_radians();
    if delta > 0.0 {
        let jitter = Uniform::new_inclusive(-delta, delta).map_err(|_| invalid("bad perturbation"))?;
        for _ in 0..opts.perturbations {
            let s = (0..2 * n)
                .map(|i| (x0[i] + jitter.sample(&mut rng)).clamp(lo[i], hi[i]))
                .collect();
            starts.push(s);
        }
    }

    let objective = |x: &[f64], g: &mut [f64]| {
        let (gp, gl) = g.split_at_mut(n);
        let mi = model.mi_gradient(&x[..n], &x[n..], gp, gl);
        g.iter_mut().for_each(|v| *v = -*v);
        -mi
    };
    let runs = par::map_indexed(starts.len(), |i| {
        boxopt::minimize(objective, &starts[i], &lo, &hi, &opts.local)
    });
    let iterations = runs.iter().map(|r| r.iterations).sum();
    let best = pick_best(runs);
    let design = AcquisitionDesign::from_radians(
        model.repetition_times().to_vec(),
        best.x[..n].to_vec(),
        best.x[n..].to_vec(),
    )?;
    Ok(DesignOptimum {
        result: model.evaluate(&design)?,
        converged: best.converged,
        starts: starts.len(),
        iterations,
    })
}
