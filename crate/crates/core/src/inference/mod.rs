//! Noisy replicate generation and recovery of kinetic rates by bounded
//! least squares.

mod lm;

use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::information::REFERENCE_PEAK_PYRUVATE;
use crate::kinetics::{simulate_lf, AcquisitionDesign, ModelParams, ScanPropagator, SignalSeries};
use crate::math;
use crate::par;
use crate::phantom::{CellGrid, SelectedCell};

/// How the per-signal noise level is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseRule {
    /// `σ = s_ref / snr` for every signal.
    Global { s_ref: f64 },
    /// `σ = max_k sP_k / snr`, using the base series' own peak.
    PeakPyruvate,
}

impl Default for NoiseRule {
    fn default() -> Self {
        NoiseRule::Global {
            s_ref: REFERENCE_PEAK_PYRUVATE,
        }
    }
}

/// A noiseless series and independent noisy copies of it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    pub base: SignalSeries,
    pub replicates: Vec<SignalSeries>,
    pub snr_data: f64,
    pub sigma: f64,
    pub seed: u64,
    pub stream: u64,
}

/// Standard-normal draw for one `(seed, stream, replicate, scan, channel)`.
///
/// The key is independent of the SNR level, so different noise levels reuse
/// the same underlying draws.
pub(crate) fn normal_draw(seed: u64, stream: u64, replicate: u64, scan: u64, channel: u64) -> f64 {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&replicate.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(2 * scan + channel);
    StandardNormal.sample(&mut rng)
}

/// `replicates` noisy copies of `base` with i.i.d. Gaussian noise.
pub fn add_noise(
    base: &SignalSeries,
    snr_data: f64,
    rule: NoiseRule,
    replicates: usize,
    seed: u64,
    stream: u64,
) -> Result<NoisyDataset> {
    if !(snr_data > 0.0) {
        return Err(invalid("snr_data must be positive"));
    }
    if replicates == 0 {
        return Err(invalid("at least one replicate is required"));
    }
    let reference = match rule {
        NoiseRule::Global { s_ref } => {
            if !(s_ref > 0.0 && s_ref.is_finite()) {
                return Err(invalid("reference signal must be positive"));
            }
            s_ref
        }
        NoiseRule::PeakPyruvate => {
            let peak = base.peak_pyruvate();
            if !(peak > 0.0) {
                return Err(Error::UnusableCell {
                    cell: stream as usize,
                });
            }
            peak
        }
    };
    let sigma = reference / snr_data;
    let sets = (0..replicates as u64)
        .map(|r| {
            let mut s = base.clone();
            if sigma > 0.0 {
                for k in 0..s.len() {
                    s.s_p[k] += sigma * normal_draw(seed, stream, r, k as u64, 0);
                    s.s_l[k] += sigma * normal_draw(seed, stream, r, k as u64, 1);
                }
            }
            s
        })
        .collect();
    Ok(NoisyDataset {
        base: base.clone(),
        replicates: sets,
        snr_data,
        sigma,
        seed,
        stream,
    })
}

/// A model parameter that a fit may adjust.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeParam {
    Kpl,
    Kve,
    T0,
}

impl FreeParam {
    pub const ALL: [FreeParam; 3] = [FreeParam::Kpl, FreeParam::Kve, FreeParam::T0];

    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            FreeParam::Kpl => (0.0, 1.0),
            FreeParam::Kve => (0.0, 1.0),
            FreeParam::T0 => (0.0, 20.0),
        }
    }

    /// Prior mean, used as the default starting point.
    pub fn default_init(self) -> f64 {
        match self {
            FreeParam::Kpl => 0.15,
            FreeParam::Kve => 0.05,
            FreeParam::T0 => 4.0,
        }
    }

    pub fn get(self, p: &ModelParams) -> f64 {
        match self {
            FreeParam::Kpl => p.kpl,
            FreeParam::Kve => p.kve,
            FreeParam::T0 => p.t0,
        }
    }

    pub fn set(self, p: &mut ModelParams, v: f64) {
        match self {
            FreeParam::Kpl => p.kpl = v,
            FreeParam::Kve => p.kve = v,
            FreeParam::T0 => p.t0 = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub free: Vec<FreeParam>,
    /// Starting values per free parameter; `None` uses the prior mean.
    pub init: Option<Vec<f64>>,
    /// Bounds per free parameter; `None` uses the defaults.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub max_iter: usize,
    pub ftol: f64,
    pub xtol: f64,
    /// Relative central-difference step for the Jacobian.
    pub fd_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            free: FreeParam::ALL.to_vec(),
            init: None,
            bounds: None,
            max_iter: 200,
            ftol: 1e-12,
            xtol: 1e-10,
            fd_step: 1e-6,
        }
    }
}

impl FitOptions {
    pub fn kpl_only() -> Self {
        Self {
            free: alloc::vec![FreeParam::Kpl],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Values of the free parameters, in the order requested.
    pub recovered: Vec<f64>,
    /// Full parameter set at the solution.
    pub params: ModelParams,
    /// Sum of squared signal misfits.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn kpl(&self) -> f64 {
        self.params.kpl
    }
}

/// Sum of squared misfits between `data` and the model at `params`.
pub fn misfit(data: &SignalSeries, design: &AcquisitionDesign, params: &ModelParams) -> Result<f64> {
    let (model, _) = simulate_lf(params, design)?;
    Ok(residual_vector(data, &model).iter().map(|r| r * r).sum())
}

fn residual_vector(data: &SignalSeries, model: &SignalSeries) -> Vec<f64> {
    let mut r = Vec::with_capacity(2 * data.len());
    r.extend(model.s_p.iter().zip(&data.s_p).map(|(m, d)| m - d));
    r.extend(model.s_l.iter().zip(&data.s_l).map(|(m, d)| m - d));
    r
}

/// Fits the free parameters of the LF model to one signal series.
pub fn fit_lf(
    data: &SignalSeries,
    design: &AcquisitionDesign,
    knowns: &ModelParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    knowns.validate()?;
    let n = design.scans();
    if data.s_p.len() != n || data.s_l.len() != n {
        return Err(invalid("data length does not match the design"));
    }
    if data.s_p.iter().chain(&data.s_l).any(|v| !v.is_finite()) {
        return Err(invalid("data must be finite"));
    }
    let free = &opts.free;
    if free.is_empty() {
        return Err(invalid("no free parameters"));
    }
    for (i, a) in free.iter().enumerate() {
        if free[..i].contains(a) {
            return Err(invalid("free parameters must be distinct"));
        }
    }
    let bounds: Vec<(f64, f64)> = match &opts.bounds {
        Some(b) if b.len() == free.len() => b.clone(),
        Some(_) => return Err(invalid("one bound pair per free parameter")),
        None => free.iter().map(|f| f.default_bounds()).collect(),
    };
    let init: Vec<f64> = match &opts.init {
        Some(v) if v.len() == free.len() => v.clone(),
        Some(_) => return Err(invalid("one initial value per free parameter")),
        None => free.iter().map(|f| f.default_init()).collect(),
    };
    let lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let hi: Vec<f64> = bounds.iter().map(|b| b.1).collect();
    if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
        return Err(invalid("lower bounds must not exceed upper bounds"));
    }

    let assemble = |x: &[f64]| {
        let mut p = *knowns;
        for (f, v) in free.iter().zip(x) {
            f.set(&mut p, *v);
        }
        p
    };
    let tr = design.repetition_times();
    let residuals = |x: &[f64]| -> Option<Vec<f64>> {
        let p = assemble(x);
        let prop = ScanPropagator::new(&p, tr).ok()?;
        let (model, _) = prop.simulate(design.theta_p(), design.theta_l());
        Some(residual_vector(data, &model))
    };
    let settings = lm::LmSettings {
        max_iter: opts.max_iter,
        ftol: opts.ftol,
        xtol: opts.xtol,
        gtol: 0.0,
        fd_step: opts.fd_step,
    };
    let out = lm::minimize(residuals, &init, &lo, &hi, &settings)
        .ok_or_else(|| invalid("model cannot be evaluated at the initial point"))?;
    Ok(FitResult {
        params: assemble(&out.x),
        recovered: out.x,
        residual: out.cost,
        converged: out.converged,
        iterations: out.iterations,
    })
}

/// Recovered-kPL statistics at one data SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryStats {
    pub snr_data: f64,
    pub mean_kpl: f64,
    /// Sample standard deviation (n − 1 denominator; 0 for one sample).
    pub std_kpl: f64,
    pub n: usize,
    pub n_converged: usize,
}

fn summarize(snr_data: f64, fits: &[Result<FitResult>]) -> RecoveryStats {
    let values: Vec<f64> = fits
        .iter()
        .filter_map(|f| f.as_ref().ok())
        .filter(|f| f.converged)
        .map(|f| f.kpl())
        .collect();
    let k = values.len();
    let mean = if k == 0 {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / k as f64
    };
    let std = if k < 2 {
        if k == 1 {
            0.0
        } else {
            f64::NAN
        }
    } else {
        math::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64)
    };
    RecoveryStats {
        snr_data,
        mean_kpl: mean,
        std_kpl: std,
        n: fits.len(),
        n_converged: k,
    }
}

/// Replicate fits of the LF model to noisy LF data at each SNR.
pub fn validate_lf(
    design: &AcquisitionDesign,
    truth: &ModelParams,
    snr_list: &[f64],
    replicates: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<Vec<RecoveryStats>> {
    if replicates == 0 {
        return Err(invalid("at least one replicate is required"));
    }
    let (base, _) = simulate_lf(truth, design)?;
    let mut out = Vec::with_capacity(snr_list.len());
    for &snr in snr_list {
        let data = add_noise(&base, snr, NoiseRule::default(), replicates, seed, 0)?;
        let fits = par::map_indexed(replicates, |r| fit_lf(&data.replicates[r], design, truth, opts));
        out.push(summarize(snr, &fits));
    }
    Ok(out)
}

/// Fits for one selected phantom cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecovery {
    pub cell: usize,
    pub band: usize,
    pub peak_vascular: f64,
    /// kPL from the noiseless cell signals; `None` if that fit failed.
    pub noiseless_kpl: Option<f64>,
    /// One entry per SNR; empty when the cell has no pyruvate signal.
    pub stats: Vec<RecoveryStats>,
    pub usable: bool,
}

/// Per-cell kPL recovery from phantom signals with the LF model.
///
/// Noise is scaled to each cell's own peak pyruvate signal.
pub fn validate_hf(
    cells: &CellGrid,
    selected: &[SelectedCell],
    design: &AcquisitionDesign,
    knowns: &ModelParams,
    snr_list: &[f64],
    replicates: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<Vec<CellRecovery>> {
    if replicates == 0 {
        return Err(invalid("at least one replicate is required"));
    }
    let times = design.scan_times();
    if times.len() != cells.times.len()
        || times.iter().zip(&cells.times).any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(invalid("design timing differs from the phantom run"));
    }
    let results = par::map_indexed(selected.len(), |i| -> Result<CellRecovery> {
        let sel = selected[i];
        let base = cells
            .signals
            .get(sel.cell)
            .ok_or_else(|| invalid("selected cell index out of range"))?;
        let noiseless = fit_lf(base, design, knowns, opts)
            .ok()
            .filter(|f| f.converged)
            .map(|f| f.kpl());
        let mut rec = CellRecovery {
            cell: sel.cell,
            band: sel.band,
            peak_vascular: sel.peak,
            noiseless_kpl: noiseless,
            stats: Vec::new(),
            usable: true,
        };
        for &snr in snr_list {
            let data = match add_noise(base, snr, NoiseRule::PeakPyruvate, replicates, seed, sel.cell as u64 + 1) {
                Ok(d) => d,
                Err(Error::UnusableCell { .. }) => {
                    rec.usable = false;
                    rec.stats.clear();
                    return Ok(rec);
                }
                Err(e) => return Err(e),
            };
            let fits: Vec<Result<FitResult>> = data
                .replicates
                .iter()
                .map(|d| fit_lf(d, design, knowns, opts))
                .collect();
            rec.stats.push(summarize(snr, &fits));
        }
        Ok(rec)
    });
    results.into_iter().collect()
}
