//! Mutual information between the summed signal and the uncertain kinetic
//! parameters `(kPL, kve, t0)`.
//!
//! The prior is discretized by a tensor Gauss-Hermite rule, which turns the
//! evidence `p(z)` into a finite Gaussian mixture centred on the forward
//! model evaluated at each node. Its entropy is integrated per component
//! with a one-dimensional Gauss-Hermite rule of the same order.

mod optimize;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

pub use optimize::{
    optimize_constant_flip, optimize_varying_flip, AngleBounds, DesignOptimum, OptimizeOptions,
};

use crate::error::{invalid, Error, Result};
use crate::kinetics::{AcquisitionDesign, ModelParams, ScanPropagator};
use crate::math;
use crate::par;
use crate::quadrature::HermiteRule;

/// Peak pyruvate signal used to convert SNR into a noise level.
pub const REFERENCE_PEAK_PYRUVATE: f64 = 0.6173;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Independent Gaussian prior on `(kPL, kve, t0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub mean: [f64; 3],
    /// Per-component standard deviations.
    pub std: [f64; 3],
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            mean: [0.15, 0.05, 4.0],
            std: [0.03, 0.01, 1.3],
        }
    }
}

impl PriorSpec {
    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        let p = Self { mean, std };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("prior mean must be finite"));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid("prior standard deviations must be positive"));
        }
        Ok(())
    }
}

/// Additive Gaussian noise on the individual signals and on their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub snr: f64,
    pub sigma_s: f64,
    pub sigma_z: f64,
}

impl NoiseModel {
    /// `σs = s_ref / snr` per signal and `σz = σs·√(2N)` for the sum of `2N` signals.
    pub fn from_snr(snr: f64, s_ref: f64, scans: usize) -> Result<Self> {
        if !(snr > 0.0 && snr.is_finite()) {
            return Err(invalid("snr must be positive"));
        }
        if !(s_ref > 0.0 && s_ref.is_finite()) {
            return Err(invalid("reference signal must be positive"));
        }
        if scans == 0 {
            return Err(invalid("scan count must be at least 1"));
        }
        let sigma_s = s_ref / snr;
        Ok(Self {
            snr,
            sigma_s,
            sigma_z: sigma_s * math::sqrt(2.0 * scans as f64),
        })
    }

    /// A noise model given directly by the total-signal standard deviation.
    pub fn from_sigma_z(sigma_z: f64, scans: usize) -> Result<Self> {
        if !(sigma_z > 0.0 && sigma_z.is_finite()) {
            return Err(invalid("sigma_z must be positive"));
        }
        if scans == 0 {
            return Err(invalid("scan count must be at least 1"));
        }
        let sigma_s = sigma_z / math::sqrt(2.0 * scans as f64);
        Ok(Self {
            snr: REFERENCE_PEAK_PYRUVATE / sigma_s,
            sigma_s,
            sigma_z,
        })
    }
}

/// Shorthand for [`NoiseModel::from_snr`].
pub fn sigma_from_snr(snr: f64, s_ref: f64, scans: usize) -> Result<NoiseModel> {
    NoiseModel::from_snr(snr, s_ref, scans)
}

/// Tensor-product nodes and probability weights over `(kPL, kve, t0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub order: usize,
    pub nodes: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss-Hermite tensor grid for the prior; nodes are `μ + √2·σ·ξ`.
pub fn gauss_hermite_3d(prior: &PriorSpec, order: usize) -> Result<QuadratureGrid> {
    prior.validate()?;
    let rule = HermiteRule::new(order)?;
    let xs = rule.standard_normal_nodes();
    let mut nodes = Vec::with_capacity(order * order * order);
    let mut weights = Vec::with_capacity(order * order * order);
    for (i, wi) in rule.weights.iter().enumerate() {
        for (j, wj) in rule.weights.iter().enumerate() {
            for (k, wk) in rule.weights.iter().enumerate() {
                nodes.push([
                    prior.mean[0] + prior.std[0] * xs[i],
                    prior.mean[1] + prior.std[1] * xs[j],
                    prior.mean[2] + prior.std[2] * xs[k],
                ]);
                weights.push(wi * wj * wk);
            }
        }
    }
    Ok(QuadratureGrid {
        order,
        nodes,
        weights,
    })
}

/// Entropy of the data given the parameters, `½·ln(2πe·σz²)`.
pub fn conditional_entropy(noise: &NoiseModel) -> f64 {
    0.5 + LN_SQRT_2PI + math::ln(noise.sigma_z)
}

/// Mutual information of a design with its entropy decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct MiResult {
    pub mi: f64,
    pub h_z: f64,
    pub h_z_given_p: f64,
    pub order: usize,
    pub design: AcquisitionDesign,
}

/// Entropy of a Gaussian mixture `Σ w_i N(g_i, σ²)`, integrated per component
/// with the given standard-normal rule. If `grad` is given it receives
/// `∂H/∂g_i`.
pub(crate) fn mixture_entropy(
    centers: &[f64],
    weights: &[f64],
    sigma: f64,
    outer_nodes: &[f64],
    outer_weights: &[f64],
    grad: Option<&mut [f64]>,
) -> f64 {
    let n = centers.len();
    let log_w: Vec<f64> = weights.iter().map(|w| math::ln(*w)).collect();
    let inv_var = 1.0 / (sigma * sigma);
    let log_norm = math::ln(sigma) + LN_SQRT_2PI;
    let want_grad = grad.is_some();

    let per_component = par::map_indexed(n, |i| {
        let mut h = 0.0;
        let mut g = if want_grad { vec![0.0; n] } else { Vec::new() };
        let mut a = vec![0.0; n];
        for (x, om) in outer_nodes.iter().zip(outer_weights) {
            let z = centers[i] + sigma * x;
            let mut max = f64::NEG_INFINITY;
            for l in 0..n {
                let d = z - centers[l];
                a[l] = log_w[l] - 0.5 * d * d * inv_var;
                max = max.max(a[l]);
            }
            let mut sum = 0.0;
            for v in a.iter_mut() {
                *v = math::exp(*v - max);
                sum += *v;
            }
            let lse = max + math::ln(sum);
            h -= om * (lse - log_norm);
            if want_grad {
                // a now holds unnormalized responsibilities.
                let inv_sum = 1.0 / sum;
                let mut dlogp = 0.0;
                for l in 0..n {
                    let r = a[l] * inv_sum;
                    let t = r * (z - centers[l]) * inv_var;
                    g[l] -= om * t;
                    dlogp -= t;
                }
                g[i] -= om * dlogp;
            }
        }
        (h, g)
    });

    let mut h = 0.0;
    if let Some(grad) = grad {
        grad.iter_mut().for_each(|v| *v = 0.0);
        for (i, (hi, gi)) in per_component.iter().enumerate() {
            h += weights[i] * hi;
            for (dst, src) in grad.iter_mut().zip(gi) {
                *dst += weights[i] * src;
            }
        }
    } else {
        for (i, (hi, _)) in per_component.iter().enumerate() {
            h += weights[i] * hi;
        }
    }
    h
}

/// Precomputed forward models at every prior node for a fixed timing.
///
/// Evaluating information for a new flip-angle schedule only reruns the
/// angle-dependent recurrence at each node.
#[derive(Debug, Clone)]
pub struct InformationModel {
    grid: QuadratureGrid,
    propagators: Vec<ScanPropagator>,
    outer_nodes: Vec<f64>,
    outer_weights: Vec<f64>,
    noise: NoiseModel,
    timing: Vec<f64>,
}

impl InformationModel {
    pub fn new(
        params_known: &ModelParams,
        prior: &PriorSpec,
        noise: &NoiseModel,
        order: usize,
        repetition_times: &[f64],
    ) -> Result<Self> {
        params_known.validate()?;
        let grid = gauss_hermite_3d(prior, order)?;
        let outer = HermiteRule::new(order)?;
        let built = par::map_indexed(grid.len(), |i| {
            let [kpl, kve, t0] = grid.nodes[i];
            let p = ModelParams {
                kpl,
                kve,
                t0,
                ..*params_known
            };
            ScanPropagator::new(&p, repetition_times).map_err(|e| Error::Node {
                node: i,
                source: Box::new(e),
            })
        });
        let propagators = built.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Self {
            outer_nodes: outer.standard_normal_nodes(),
            outer_weights: outer.weights,
            grid,
            propagators,
            noise: *noise,
            timing: repetition_times.to_vec(),
        })
    }

    pub fn for_design(
        design: &AcquisitionDesign,
        params_known: &ModelParams,
        prior: &PriorSpec,
        noise: &NoiseModel,
        order: usize,
    ) -> Result<Self> {
        Self::new(params_known, prior, noise, order, design.repetition_times())
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn scans(&self) -> usize {
        self.timing.len()
    }

    pub fn repetition_times(&self) -> &[f64] {
        &self.timing
    }

    pub fn order(&self) -> usize {
        self.grid.order
    }

    /// Total signal at each prior node for angles in radians.
    pub fn node_totals(&self, theta_p: &[f64], theta_l: &[f64]) -> Vec<f64> {
        self.propagators
            .iter()
            .map(|p| p.total_signal(theta_p, theta_l))
            .collect()
    }

    fn node_totals_constant(&self, theta_p: f64, theta_l: f64) -> Vec<f64> {
        self.propagators
            .iter()
            .map(|p| p.total_signal_constant(theta_p, theta_l))
            .collect()
    }

    fn entropy_of(&self, totals: &[f64], grad: Option<&mut [f64]>) -> f64 {
        mixture_entropy(
            totals,
            &self.grid.weights,
            self.noise.sigma_z,
            &self.outer_nodes,
            &self.outer_weights,
            grad,
        )
    }

    pub fn conditional_entropy(&self) -> f64 {
        conditional_entropy(&self.noise)
    }

    pub fn evidence_entropy(&self, theta_p: &[f64], theta_l: &[f64]) -> f64 {
        self.entropy_of(&self.node_totals(theta_p, theta_l), None)
    }

    /// Mutual information for a schedule in radians.
    pub fn mi(&self, theta_p: &[f64], theta_l: &[f64]) -> f64 {
        self.evidence_entropy(theta_p, theta_l) - self.conditional_entropy()
    }

    /// Mutual information with one angle pair (radians) at every scan.
    pub fn mi_constant(&self, theta_p: f64, theta_l: f64) -> f64 {
        let totals = self.node_totals_constant(theta_p, theta_l);
        self.entropy_of(&totals, None) - self.conditional_entropy()
    }

    /// Mutual information and its gradient with respect to every angle.
    pub fn mi_gradient(
        &self,
        theta_p: &[f64],
        theta_l: &[f64],
        grad_p: &mut [f64],
        grad_l: &mut [f64],
    ) -> f64 {
        let n = self.scans();
        let sens = par::map_indexed(self.propagators.len(), |i| {
            let mut gp = vec![0.0; n];
            let mut gl = vec![0.0; n];
            let total = self.propagators[i].total_signal_gradient(theta_p, theta_l, &mut gp, &mut gl);
            (total, gp, gl)
        });
        let totals: Vec<f64> = sens.iter().map(|s| s.0).collect();
        let mut dh = vec![0.0; totals.len()];
        let h = self.entropy_of(&totals, Some(&mut dh));
        grad_p.iter_mut().for_each(|v| *v = 0.0);
        grad_l.iter_mut().for_each(|v| *v = 0.0);
        for (w, (_, gp, gl)) in dh.iter().zip(&sens) {
            for k in 0..n {
                grad_p[k] += w * gp[k];
                grad_l[k] += w * gl[k];
            }
        }
        h - self.conditional_entropy()
    }

    /// Full result for a design sharing this model's timing.
    pub fn evaluate(&self, design: &AcquisitionDesign) -> Result<MiResult> {
        if design.repetition_times() != self.timing.as_slice() {
            return Err(invalid("design timing differs from the information model"));
        }
        let h_z = self.evidence_entropy(design.theta_p(), design.theta_l());
        let h_cond = self.conditional_entropy();
        Ok(MiResult {
            mi: h_z - h_cond,
            h_z,
            h_z_given_p: h_cond,
            order: self.order(),
            design: design.clone(),
        })
    }
}

/// Entropy of the evidence `p(z)` at a fixed quadrature order.
pub fn evidence_entropy(
    design: &AcquisitionDesign,
    params_known: &ModelParams,
    prior: &PriorSpec,
    noise: &NoiseModel,
    order: usize,
) -> Result<f64> {
    let model = InformationModel::for_design(design, params_known, prior, noise, order)?;
    Ok(model.evidence_entropy(design.theta_p(), design.theta_l()))
}

/// Evidence entropy from an increasing sequence of quadrature orders.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergedEntropy {
    pub h_z: f64,
    /// Order of the last evaluation.
    pub order: usize,
    pub converged: bool,
    pub history: Vec<(usize, f64)>,
}

/// Orders tried by [`evidence_entropy_converged`].
pub const ORDER_SEQUENCE: [usize; 4] = [3, 5, 7, 9];

/// Raises the order through 3, 5, 7, 9 until two successive values differ
/// by less than `1e-4` nats.
pub fn evidence_entropy_converged(
    design: &AcquisitionDesign,
    params_known: &ModelParams,
    prior: &PriorSpec,
    noise: &NoiseModel,
) -> Result<ConvergedEntropy> {
    let mut history = Vec::new();
    for order in ORDER_SEQUENCE {
        let h = evidence_entropy(design, params_known, prior, noise, order)?;
        let done = history
            .last()
            .is_some_and(|&(_, prev): &(usize, f64)| (h - prev).abs() < 1e-4);
        history.push((order, h));
        if done {
            return Ok(ConvergedEntropy {
                h_z: h,
                order,
                converged: true,
                history,
            });
        }
    }
    let &(order, h_z) = history.last().expect("at least one order");
    Ok(ConvergedEntropy {
        h_z,
        order,
        converged: false,
        history,
    })
}

/// `I = H(z) − H(z|P)` at a fixed order.
pub fn mutual_information(
    design: &AcquisitionDesign,
    params_known: &ModelParams,
    prior: &PriorSpec,
    noise: &NoiseModel,
    order: usize,
) -> Result<MiResult> {
    InformationModel::for_design(design, params_known, prior, noise, order)?.evaluate(design)
}
