//! Spatially invariant two-compartment pyruvate/lactate exchange model.
//!
//! Between scans the interstitial longitudinal magnetization obeys
//! `dφ/dt = A φ + (kve/νe)·VIF(t)`; each scan removes a fraction
//! `1 − cos θ` of it and records `sin θ` times the tissue-weighted amount.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{Mat2, Vec2};
use crate::math;
use crate::ode::{integrate, OdeOptions};

/// Tissue, kinetic and vascular-input constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Pyruvate T1 (s).
    pub t1p: f64,
    /// Lactate T1 (s).
    pub t1l: f64,
    /// Pyruvate-to-lactate rate (1/s).
    pub kpl: f64,
    /// Lactate-to-pyruvate rate (1/s).
    pub klp: f64,
    /// Vascular-to-interstitial exchange rate (1/s).
    pub kve: f64,
    /// Extravascular volume fraction.
    pub nu_e: f64,
    /// Bolus arrival time (s).
    pub t0: f64,
    /// Vascular input amplitude.
    pub sigma_p: f64,
    /// Gamma shape of the vascular input.
    pub alpha_p: f64,
    /// Gamma scale of the vascular input (s).
    pub beta_p: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            t1p: 30.0,
            t1l: 25.0,
            kpl: 0.15,
            klp: 0.0,
            kve: 0.05,
            nu_e: 0.95,
            t0: 4.0,
            sigma_p: 100.0,
            alpha_p: 2.5,
            beta_p: 4.5,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.t1p,
            self.t1l,
            self.kpl,
            self.klp,
            self.kve,
            self.nu_e,
            self.t0,
            self.sigma_p,
            self.alpha_p,
            self.beta_p,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("model parameters must be finite"));
        }
        if self.t1p <= 0.0 || self.t1l <= 0.0 {
            return Err(invalid("T1 values must be positive"));
        }
        if self.kpl < 0.0 || self.klp < 0.0 || self.kve < 0.0 {
            return Err(invalid("exchange rates must be nonnegative"));
        }
        if !(self.nu_e > 0.0 && self.nu_e <= 1.0) {
            return Err(invalid("nu_e must lie in (0, 1]"));
        }
        if self.alpha_p <= 0.0 || self.beta_p <= 0.0 {
            return Err(invalid("gamma shape and scale must be positive"));
        }
        if self.sigma_p < 0.0 {
            return Err(invalid("sigma_p must be nonnegative"));
        }
        Ok(())
    }
}

/// Repetition times and per-scan flip angles.
///
/// Angles are held in radians; the `*_deg` constructors and accessors are
/// the external interface.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionDesign {
    tr: Vec<f64>,
    theta_p: Vec<f64>,
    theta_l: Vec<f64>,
}

const ANGLE_SLACK: f64 = 1e-12;

impl AcquisitionDesign {
    /// Builds a design from repetition times (first entry 0) and angles in degrees.
    pub fn from_degrees(tr: Vec<f64>, theta_p_deg: &[f64], theta_l_deg: &[f64]) -> Result<Self> {
        let p = theta_p_deg.iter().map(|d| d.to_radians()).collect();
        let l = theta_l_deg.iter().map(|d| d.to_radians()).collect();
        Self::from_radians(tr, p, l)
    }

    pub fn from_radians(tr: Vec<f64>, theta_p: Vec<f64>, theta_l: Vec<f64>) -> Result<Self> {
        let n = tr.len();
        if n == 0 {
            return Err(invalid("design needs at least one scan"));
        }
        if theta_p.len() != n || theta_l.len() != n {
            return Err(invalid("angle lists must match the scan count"));
        }
        if tr[0] != 0.0 {
            return Err(invalid("the first repetition time must be 0"));
        }
        if tr[1..].iter().any(|&t| !(t.is_finite() && t > 0.0)) {
            return Err(invalid("repetition times after the first must be positive"));
        }
        let design = Self {
            tr,
            theta_p,
            theta_l,
        };
        design.check_angles(&design.theta_p)?;
        design.check_angles(&design.theta_l)?;
        Ok(design)
    }

    /// `n` scans spaced `tr` seconds apart with fixed angles in degrees.
    pub fn constant(n: usize, tr: f64, theta_p_deg: f64, theta_l_deg: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("design needs at least one scan"));
        }
        let mut trs = alloc::vec![tr; n];
        trs[0] = 0.0;
        Self::from_degrees(trs, &alloc::vec![theta_p_deg; n], &alloc::vec![theta_l_deg; n])
    }

    fn check_angles(&self, angles: &[f64]) -> Result<()> {
        let max = core::f64::consts::FRAC_PI_2 + ANGLE_SLACK;
        if angles
            .iter()
            .any(|&a| !(a.is_finite() && a >= -ANGLE_SLACK && a <= max))
        {
            return Err(invalid("flip angles must lie in [0, 90] degrees"));
        }
        Ok(())
    }

    /// Same timing with new angles (radians).
    pub fn with_angles(&self, theta_p: Vec<f64>, theta_l: Vec<f64>) -> Result<Self> {
        Self::from_radians(self.tr.clone(), theta_p, theta_l)
    }

    pub fn scans(&self) -> usize {
        self.tr.len()
    }

    pub fn repetition_times(&self) -> &[f64] {
        &self.tr
    }

    pub fn theta_p(&self) -> &[f64] {
        &self.theta_p
    }

    pub fn theta_l(&self) -> &[f64] {
        &self.theta_l
    }

    pub fn theta_p_deg(&self) -> Vec<f64> {
        self.theta_p.iter().map(|a| a.to_degrees()).collect()
    }

    pub fn theta_l_deg(&self) -> Vec<f64> {
        self.theta_l.iter().map(|a| a.to_degrees()).collect()
    }

    /// Cumulative scan times, starting at 0.
    pub fn scan_times(&self) -> Vec<f64> {
        scan_times(&self.tr)
    }
}

impl Default for AcquisitionDesign {
    /// 30 scans, 3 s apart, 20° pyruvate and 30° lactate.
    fn default() -> Self {
        Self::constant(30, 3.0, 20.0, 30.0).expect("default design is valid")
    }
}

pub(crate) fn scan_times(tr: &[f64]) -> Vec<f64> {
    let mut t = 0.0;
    tr.iter()
        .map(|dt| {
            t += dt;
            t
        })
        .collect()
}

/// Longitudinal interstitial magnetization.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MagnetizationState {
    pub phi_p: f64,
    pub phi_l: f64,
}

impl MagnetizationState {
    pub fn new(phi_p: f64, phi_l: f64) -> Self {
        Self { phi_p, phi_l }
    }

    fn from_vec(v: Vec2) -> Self {
        Self::new(v[0], v[1])
    }
}

/// Acquired pyruvate and lactate signals per scan.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignalSeries {
    pub times: Vec<f64>,
    pub s_p: Vec<f64>,
    pub s_l: Vec<f64>,
}

impl SignalSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Grand sum of both channels.
    pub fn total(&self) -> f64 {
        self.s_p.iter().sum::<f64>() + self.s_l.iter().sum::<f64>()
    }

    pub fn peak_pyruvate(&self) -> f64 {
        self.s_p.iter().copied().fold(0.0, f64::max)
    }
}

/// Gamma probability density with shape `a` and scale `b`; zero for `t < 0`.
pub fn gamma_pdf(t: f64, a: f64, b: f64) -> Result<f64> {
    if !(t.is_finite() && a.is_finite() && b.is_finite()) {
        return Err(invalid("gamma_pdf arguments must be finite"));
    }
    if a <= 0.0 || b <= 0.0 {
        return Err(invalid("gamma shape and scale must be positive"));
    }
    Ok(GammaShape::new(a, b).pdf(t))
}

#[derive(Debug, Clone, Copy)]
struct GammaShape {
    a: f64,
    inv_b: f64,
    log_norm: f64,
}

impl GammaShape {
    fn new(a: f64, b: f64) -> Self {
        Self {
            a,
            inv_b: 1.0 / b,
            log_norm: -(a * math::ln(b) + math::lgamma(a)),
        }
    }

    fn pdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        if t == 0.0 {
            return match self.a.partial_cmp(&1.0) {
                Some(core::cmp::Ordering::Greater) => 0.0,
                Some(core::cmp::Ordering::Equal) => math::exp(self.log_norm),
                _ => f64::INFINITY,
            };
        }
        math::exp((self.a - 1.0) * math::ln(t) - t * self.inv_b + self.log_norm)
    }
}

/// Vascular input, `σP·γ(t − t0)` for pyruvate and zero for lactate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct VascularInput {
    shape: GammaShape,
    sigma: f64,
    t0: f64,
}

impl VascularInput {
    pub(crate) fn new(p: &ModelParams) -> Self {
        Self {
            shape: GammaShape::new(p.alpha_p, p.beta_p),
            sigma: p.sigma_p,
            t0: p.t0,
        }
    }

    pub(crate) fn pyruvate(&self, t: f64) -> f64 {
        if t < self.t0 {
            0.0
        } else {
            self.sigma * self.shape.pdf(t - self.t0)
        }
    }
}

/// Vascular input function at time `t`.
pub fn vif(t: f64, params: &ModelParams) -> Result<Vec2> {
    params.validate()?;
    if !t.is_finite() {
        return Err(invalid("time must be finite"));
    }
    Ok([VascularInput::new(params).pyruvate(t), 0.0])
}

/// Relaxation/exchange rate matrix.
pub fn system_matrix(params: &ModelParams) -> Result<Mat2> {
    if params.nu_e == 0.0 {
        return Err(invalid("nu_e = 0 makes the vascular exchange term undefined"));
    }
    params.validate()?;
    Ok(rate_matrix(params))
}

fn rate_matrix(p: &ModelParams) -> Mat2 {
    Mat2::new(
        -1.0 / p.t1p - p.kpl - p.kve / p.nu_e,
        p.klp,
        p.kpl,
        -1.0 / p.t1l - p.klp,
    )
}

/// `∫_{ta}^{tb} exp((tb − τ)A)·c·VIF(τ) dτ`, by adaptive integration of the
/// forced system from a zero state.
fn forcing_integral(
    a: &Mat2,
    input: &VascularInput,
    coupling: f64,
    ta: f64,
    tb: f64,
) -> Result<Vec2> {
    let start = ta.max(input.t0);
    if start >= tb || coupling == 0.0 || input.sigma == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let opts = OdeOptions::default();
    let rhs = |t: f64, y: &Vec2| {
        let ay = a.apply(*y);
        [ay[0] + coupling * input.pyruvate(t), ay[1]]
    };
    integrate(rhs, start, tb, [0.0, 0.0], &opts).map_err(|e| match e {
        Error::Integration { reason, .. } => Error::Integration {
            start: ta,
            end: tb,
            reason,
        },
        other => other,
    })
}

/// Advances the state measured at scan `k` (0-based) to scan `k + 1`,
/// applying the excitation loss of scan `k` first.
pub fn propagate_interval(
    state: MagnetizationState,
    params: &ModelParams,
    design: &AcquisitionDesign,
    k: usize,
) -> Result<MagnetizationState> {
    let a = system_matrix(params)?;
    if k + 1 >= design.scans() {
        return Err(invalid("no interval after the last scan"));
    }
    if !(state.phi_p.is_finite() && state.phi_l.is_finite()) {
        return Err(invalid("state must be finite"));
    }
    let times = design.scan_times();
    let (ta, tb) = (times[k], times[k + 1]);
    let input = VascularInput::new(params);
    let excited = [
        math::cos(design.theta_p[k]) * state.phi_p,
        math::cos(design.theta_l[k]) * state.phi_l,
    ];
    let hom = a.expm(tb - ta).apply(excited);
    let q = forcing_integral(&a, &input, params.kve / params.nu_e, ta, tb)?;
    Ok(MagnetizationState::new(hom[0] + q[0], hom[1] + q[1]))
}

/// Runs the model over every scan. Returns the signals and the
/// magnetization present just before each excitation.
pub fn simulate_lf(
    params: &ModelParams,
    design: &AcquisitionDesign,
) -> Result<(SignalSeries, Vec<MagnetizationState>)> {
    let prop = ScanPropagator::new(params, design.repetition_times())?;
    Ok(prop.simulate(design.theta_p(), design.theta_l()))
}

/// Sum of all pyruvate and lactate signals.
pub fn total_signal(params: &ModelParams, design: &AcquisitionDesign) -> Result<f64> {
    let prop = ScanPropagator::new(params, design.repetition_times())?;
    Ok(prop.total_signal(design.theta_p(), design.theta_l()))
}

/// The angle-independent part of the model for a fixed timing.
///
/// Transition matrices and forcing integrals do not depend on flip angles,
/// so once built, evaluating signals for a new schedule is a short linear
/// recurrence. Optimizers rely on this.
#[derive(Debug, Clone)]
pub struct ScanPropagator {
    times: Vec<f64>,
    transitions: Vec<Mat2>,
    forcing: Vec<Vec2>,
    vascular: Vec<f64>,
    nu_e: f64,
}

impl ScanPropagator {
    pub fn new(params: &ModelParams, tr: &[f64]) -> Result<Self> {
        let a = system_matrix(params)?;
        if tr.is_empty() || tr[0] != 0.0 || tr[1..].iter().any(|&t| !(t > 0.0)) {
            return Err(invalid("invalid repetition times"));
        }
        let times = scan_times(tr);
        let input = VascularInput::new(params);
        let coupling = params.kve / params.nu_e;
        let n = times.len();
        let mut transitions = Vec::with_capacity(n.saturating_sub(1));
        let mut forcing = Vec::with_capacity(n.saturating_sub(1));
        for k in 0..n - 1 {
            let (ta, tb) = (times[k], times[k + 1]);
            // Reuse the exponential when the spacing repeats.
            let e = match transitions.last() {
                Some(&prev) if tr[k + 1] == tr[k] => prev,
                _ => a.expm(tb - ta),
            };
            transitions.push(e);
            forcing.push(forcing_integral(&a, &input, coupling, ta, tb)?);
        }
        let vascular = times.iter().map(|&t| input.pyruvate(t)).collect();
        Ok(Self {
            times,
            transitions,
            forcing,
            vascular,
            nu_e: params.nu_e,
        })
    }

    pub fn scans(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn step(&self, k: usize, phi: Vec2, cp: f64, cl: f64) -> Vec2 {
        let e = self.transitions[k].apply([cp * phi[0], cl * phi[1]]);
        let q = self.forcing[k];
        [e[0] + q[0], e[1] + q[1]]
    }

    fn scan_signal(&self, k: usize, phi: Vec2, sp: f64, sl: f64) -> (f64, f64) {
        (
            sp * (self.nu_e * phi[0] + (1.0 - self.nu_e) * self.vascular[k]),
            sl * self.nu_e * phi[1],
        )
    }

    /// Signals and pre-excitation states for angles in radians.
    pub fn simulate(
        &self,
        theta_p: &[f64],
        theta_l: &[f64],
    ) -> (SignalSeries, Vec<MagnetizationState>) {
        let n = self.scans();
        let mut series = SignalSeries {
            times: self.times.clone(),
            s_p: Vec::with_capacity(n),
            s_l: Vec::with_capacity(n),
        };
        let mut states = Vec::with_capacity(n);
        let mut phi = [0.0, 0.0];
        for k in 0..n {
            let (p, l) = (theta_p[k], theta_l[k]);
            let (sp, sl) = self.scan_signal(k, phi, math::sin(p), math::sin(l));
            series.s_p.push(sp);
            series.s_l.push(sl);
            states.push(MagnetizationState::from_vec(phi));
            if k + 1 < n {
                phi = self.step(k, phi, math::cos(p), math::cos(l));
            }
        }
        (series, states)
    }

    /// Sum of all signals for angles in radians.
    pub fn total_signal(&self, theta_p: &[f64], theta_l: &[f64]) -> f64 {
        let n = self.scans();
        let mut phi = [0.0, 0.0];
        let mut total = 0.0;
        for k in 0..n {
            let (p, l) = (theta_p[k], theta_l[k]);
            let (sp, sl) = self.scan_signal(k, phi, math::sin(p), math::sin(l));
            total += sp + sl;
            if k + 1 < n {
                phi = self.step(k, phi, math::cos(p), math::cos(l));
            }
        }
        total
    }

    /// Total signal with a constant angle pair (radians) at every scan.
    pub fn total_signal_constant(&self, theta_p: f64, theta_l: f64) -> f64 {
        let (sp, cp) = (math::sin(theta_p), math::cos(theta_p));
        let (sl, cl) = (math::sin(theta_l), math::cos(theta_l));
        let n = self.scans();
        let mut phi = [0.0, 0.0];
        let mut total = 0.0;
        for k in 0..n {
            let (a, b) = self.scan_signal(k, phi, sp, sl);
            total += a + b;
            if k + 1 < n {
                phi = self.step(k, phi, cp, cl);
            }
        }
        total
    }

    /// Total signal and its gradient with respect to every angle, by a
    /// reverse sweep over the scans.
    pub fn total_signal_gradient(
        &self,
        theta_p: &[f64],
        theta_l: &[f64],
        grad_p: &mut [f64],
        grad_l: &mut [f64],
    ) -> f64 {
        let n = self.scans();
        let mut states = Vec::with_capacity(n);
        let mut phi = [0.0, 0.0];
        let mut total = 0.0;
        for k in 0..n {
            let (p, l) = (theta_p[k], theta_l[k]);
            states.push(phi);
            let (sp, sl) = self.scan_signal(k, phi, math::sin(p), math::sin(l));
            total += sp + sl;
            if k + 1 < n {
                phi = self.step(k, phi, math::cos(p), math::cos(l));
            }
        }

        // adj = d(total)/d(state at scan k+1) while visiting scan k.
        let mut adj: Vec2 = [0.0, 0.0];
        for k in (0..n).rev() {
            let phi = states[k];
            let (p, l) = (theta_p[k], theta_l[k]);
            let (sin_p, cos_p) = (math::sin(p), math::cos(p));
            let (sin_l, cos_l) = (math::sin(l), math::cos(l));
            let mut dp = cos_p * (self.nu_e * phi[0] + (1.0 - self.nu_e) * self.vascular[k]);
            let mut dl = cos_l * self.nu_e * phi[1];
            let mut back = [0.0, 0.0];
            if k + 1 < n {
                // w = Eᵀ·adj is the sensitivity to the post-excitation state.
                let w = self.transitions[k].transpose().apply(adj);
                dp -= w[0] * sin_p * phi[0];
                dl -= w[1] * sin_l * phi[1];
                back = [cos_p * w[0], cos_l * w[1]];
            }
            grad_p[k] = dp;
            grad_l[k] = dl;
            adj = [
                self.nu_e * sin_p + back[0],
                self.nu_e * sin_l + back[1],
            ];
        }
        total
    }
}
