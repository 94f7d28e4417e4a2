use alloc::vec;
use alloc::vec::Vec;

use super::geometry::{coarse_factor, PhantomGrid, COARSE_CELLS};
use crate::error::{invalid, Error, Result};
use crate::kinetics::{AcquisitionDesign, ModelParams, SignalSeries, VascularInput};
use crate::math;
use crate::par;

/// Reaction-diffusion constants on top of the exchange model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HfParams {
    pub model: ModelParams,
    /// Pyruvate diffusivity (mm²/s).
    pub dp: f64,
    /// Lactate diffusivity (mm²/s).
    pub dl: f64,
    /// Vascular-to-tissue pyruvate permeability (1/s).
    pub lp: f64,
    /// Vascular-to-tissue lactate permeability (1/s).
    pub ll: f64,
}

impl Default for HfParams {
    fn default() -> Self {
        Self {
            model: ModelParams::default(),
            dp: 20.0,
            dl: 20.0,
            lp: 0.2,
            ll: 0.2,
        }
    }
}

impl HfParams {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for v in [self.dp, self.dl, self.lp, self.ll] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid("diffusivities and permeabilities must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Interstitial fields at one instant. Vascular fields are prescribed and
/// computed on demand from the grid's volume fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomState {
    pub phi_p: Vec<f64>,
    pub phi_l: Vec<f64>,
    pub time: f64,
}

impl PhantomState {
    pub fn zeros(grid: &PhantomGrid) -> Self {
        Self {
            phi_p: vec![0.0; grid.len()],
            phi_l: vec![0.0; grid.len()],
            time: 0.0,
        }
    }

    pub fn uniform(grid: &PhantomGrid, phi_p: f64, phi_l: f64) -> Self {
        Self {
            phi_p: vec![phi_p; grid.len()],
            phi_l: vec![phi_l; grid.len()],
            time: 0.0,
        }
    }

    /// Vascular pyruvate field at the state's time.
    pub fn vascular_pyruvate(&self, grid: &PhantomGrid, params: &HfParams) -> Vec<f64> {
        let v = VascularInput::new(&params.model).pyruvate(self.time);
        grid.vascular.iter().map(|f| f * v).collect()
    }

    pub fn total_pyruvate(&self) -> f64 {
        par::block_sum(self.phi_p.len(), |i| self.phi_p[i])
    }

    pub fn total_lactate(&self) -> f64 {
        par::block_sum(self.phi_l.len(), |i| self.phi_l[i])
    }
}

/// Scales the interstitial fields by `cos θ` (angles in radians).
pub fn apply_excitation(state: &mut PhantomState, theta_p: f64, theta_l: f64) {
    let cp = math::cos(theta_p);
    let cl = math::cos(theta_l);
    state.phi_p.iter_mut().for_each(|v| *v *= cp);
    state.phi_l.iter_mut().for_each(|v| *v *= cl);
}

/// Conjugate-gradient settings for the implicit solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `‖b − Mx‖ / ‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

/// `(c + κ·deg_i)·x_i − κ·Σ x_j` over in-domain neighbours: the backward
/// Euler operator `1 + Δt·r − Δt·D·Δ` with no-flux boundaries.
struct ImplicitOperator<'a> {
    dims: [usize; 3],
    domain: &'a [bool],
    degree: &'a [u8],
    c: f64,
    kappa: f64,
}

impl ImplicitOperator<'_> {
    fn diag(&self, i: usize) -> f64 {
        if self.domain[i] {
            self.c + self.kappa * self.degree[i] as f64
        } else {
            1.0
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let [nx, ny, nz] = self.dims;
        let plane = nx * ny;
        par::for_each_chunk_mut(y, plane, |k, out| {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = i + nx * j + plane * k;
                    let o = i + nx * j;
                    if !self.domain[idx] {
                        out[o] = x[idx];
                        continue;
                    }
                    let xi = x[idx];
                    let mut acc = self.c * xi;
                    if self.kappa != 0.0 {
                        let mut lap = 0.0;
                        let mut visit = |n: usize| {
                            if self.domain[n] {
                                lap += xi - x[n];
                            }
                        };
                        if i > 0 {
                            visit(idx - 1);
                        }
                        if i + 1 < nx {
                            visit(idx + 1);
                        }
                        if j > 0 {
                            visit(idx - nx);
                        }
                        if j + 1 < ny {
                            visit(idx + nx);
                        }
                        if k > 0 {
                            visit(idx - plane);
                        }
                        if k + 1 < nz {
                            visit(idx + plane);
                        }
                        acc += self.kappa * lap;
                    }
                    out[o] = acc;
                }
            }
        });
    }
}

fn neighbour_degree(grid: &PhantomGrid) -> Vec<u8> {
    let [nx, ny, nz] = grid.dims;
    let mut deg = vec![0u8; grid.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = grid.index(i, j, k);
                if !grid.domain[idx] {
                    continue;
                }
                let mut d = 0;
                let mut count = |n: usize| {
                    if grid.domain[n] {
                        d += 1;
                    }
                };
                if i > 0 {
                    count(idx - 1);
                }
                if i + 1 < nx {
                    count(idx + 1);
                }
                if j > 0 {
                    count(idx - nx);
                }
                if j + 1 < ny {
                    count(idx + nx);
                }
                if k > 0 {
                    count(idx - nx * ny);
                }
                if k + 1 < nz {
                    count(idx + nx * ny);
                }
                deg[idx] = d;
            }
        }
    }
    deg
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    par::block_sum(a.len(), |i| a[i] * b[i])
}

const CHUNK: usize = 4096;

/// Jacobi-preconditioned CG; `x` holds the initial guess on entry.
fn solve(op: &ImplicitOperator, b: &[f64], x: &mut [f64], opts: &CgOptions, ws: &mut Workspace) -> Result<usize> {
    let n = b.len();
    let b_norm = math::sqrt(dot(b, b));
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let Workspace { r, z, p, ap, inv_diag } = ws;
    for i in 0..n {
        inv_diag[i] = 1.0 / op.diag(i);
    }
    op.apply(x, ap);
    par::for_each_chunk_mut(r, CHUNK, |c, out| {
        let base = c * CHUNK;
        for (o, v) in out.iter_mut().enumerate() {
            *v = b[base + o] - ap[base + o];
        }
    });
    for i in 0..n {
        z[i] = inv_diag[i] * r[i];
    }
    p.copy_from_slice(z);
    let mut rz = dot(r, z);
    let target = opts.tol * b_norm;
    let mut res = math::sqrt(dot(r, r));
    let mut iter = 0;
    while res > target {
        if iter >= opts.max_iter {
            return Err(Error::LinearSolver {
                iterations: iter,
                residual: res / b_norm,
            });
        }
        iter += 1;
        op.apply(p, ap);
        let pap = dot(p, ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolver {
                iterations: iter,
                residual: res / b_norm,
            });
        }
        let alpha = rz / pap;
        {
            let (p, ap) = (&*p, &*ap);
            par::for_each_chunk_mut(x, CHUNK, |c, out| {
                let base = c * CHUNK;
                for (o, v) in out.iter_mut().enumerate() {
                    *v += alpha * p[base + o];
                }
            });
            par::for_each_chunk_mut(r, CHUNK, |c, out| {
                let base = c * CHUNK;
                for (o, v) in out.iter_mut().enumerate() {
                    *v -= alpha * ap[base + o];
                }
            });
        }
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        let rz_new = dot(r, z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = math::sqrt(dot(r, r));
    }
    Ok(iter)
}

struct Workspace {
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
    inv_diag: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            r: vec![0.0; n],
            z: vec![0.0; n],
            p: vec![0.0; n],
            ap: vec![0.0; n],
            inv_diag: vec![0.0; n],
        }
    }
}

/// Reusable state for repeated implicit steps on one grid.
pub(crate) struct Stepper<'a> {
    grid: &'a PhantomGrid,
    params: HfParams,
    degree: Vec<u8>,
    rhs: Vec<f64>,
    next: Vec<f64>,
    ws: Workspace,
    cg: CgOptions,
    pub(crate) cg_iterations: usize,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(grid: &'a PhantomGrid, params: &HfParams, cg: CgOptions) -> Self {
        let n = grid.len();
        Self {
            grid,
            params: *params,
            degree: neighbour_degree(grid),
            rhs: vec![0.0; n],
            next: vec![0.0; n],
            ws: Workspace::new(n),
            cg,
            cg_iterations: 0,
        }
    }

    /// One backward-Euler step: pyruvate first, then lactate driven by the
    /// new pyruvate. `vascular_new` is the vascular pyruvate amplitude at
    /// the end of the step.
    pub(crate) fn step(&mut self, state: &mut PhantomState, dt: f64, vascular_new: f64) -> Result<()> {
        let m = &self.params.model;
        let h2 = self.grid.spacing * self.grid.spacing;
        let domain = &self.grid.domain;
        let frac = &self.grid.vascular;

        let op_p = ImplicitOperator {
            dims: self.grid.dims,
            domain,
            degree: &self.degree,
            c: 1.0 + dt * (1.0 / m.t1p + m.kpl),
            kappa: dt * self.params.dp / h2,
        };
        let (klp, lp) = (m.klp, self.params.lp);
        for i in 0..self.rhs.len() {
            self.rhs[i] = if domain[i] {
                state.phi_p[i] + dt * (klp * state.phi_l[i] + lp * frac[i] * vascular_new)
            } else {
                0.0
            };
        }
        self.next.copy_from_slice(&state.phi_p);
        self.cg_iterations += solve(&op_p, &self.rhs, &mut self.next, &self.cg, &mut self.ws)?;
        core::mem::swap(&mut state.phi_p, &mut self.next);

        let op_l = ImplicitOperator {
            dims: self.grid.dims,
            domain,
            degree: &self.degree,
            c: 1.0 + dt * (1.0 / m.t1l + m.klp),
            kappa: dt * self.params.dl / h2,
        };
        let kpl = m.kpl;
        for i in 0..self.rhs.len() {
            self.rhs[i] = if domain[i] {
                state.phi_l[i] + dt * kpl * state.phi_p[i]
            } else {
                0.0
            };
        }
        self.next.copy_from_slice(&state.phi_l);
        self.cg_iterations += solve(&op_l, &self.rhs, &mut self.next, &self.cg, &mut self.ws)?;
        core::mem::swap(&mut state.phi_l, &mut self.next);

        state.time += dt;
        Ok(())
    }
}

/// Advances `state` by `dt`. `vascular_input(t)` gives the vascular pyruvate
/// amplitude; each voxel sees it scaled by its blood volume fraction.
pub fn hf_step<F: Fn(f64) -> f64>(
    grid: &PhantomGrid,
    state: &PhantomState,
    params: &HfParams,
    dt: f64,
    vascular_input: F,
    cg: &CgOptions,
) -> Result<PhantomState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("time step must be positive"));
    }
    if state.phi_p.len() != grid.len() || state.phi_l.len() != grid.len() {
        return Err(invalid("state does not match the grid"));
    }
    params.validate()?;
    let mut next = state.clone();
    let mut stepper = Stepper::new(grid, params, *cg);
    stepper.step(&mut next, dt, vascular_input(state.time + dt))?;
    Ok(next)
}

/// Settings for a full phantom run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HfOptions {
    pub dt: f64,
    /// Add the vascular pyruvate to each cell's pyruvate signal.
    pub include_vascular_signal: bool,
    pub cg: CgOptions,
    /// Allowed negative excursion relative to the largest field value.
    pub negativity_tolerance: f64,
}

impl Default for HfOptions {
    fn default() -> Self {
        Self {
            dt: 0.15,
            include_vascular_signal: true,
            cg: CgOptions::default(),
            negativity_tolerance: 1e-8,
        }
    }
}

/// Per-cell results of a phantom run on the 16³ aggregation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub coarse: [usize; 3],
    /// Volume of one aggregation cell (mm³).
    pub cell_volume: f64,
    pub times: Vec<f64>,
    /// Cell totals `∫ φP` at each scan before excitation, indexed `[scan][cell]`.
    pub q_p: Vec<Vec<f64>>,
    pub q_l: Vec<Vec<f64>>,
    pub signals: Vec<SignalSeries>,
    /// Largest cell-mean vascular pyruvate over the scan times.
    pub peak_vascular: Vec<f64>,
    /// Most negative field value seen, relative to the largest field value
    /// (zero when the fields stayed nonnegative).
    pub min_relative_field: f64,
    pub cg_iterations: usize,
}

impl CellGrid {
    pub fn cells(&self) -> usize {
        self.peak_vascular.len()
    }
}

fn steps_for(tr: f64, dt: f64) -> Result<usize> {
    let steps = math::round(tr / dt);
    if steps < 1.0 || (steps * dt - tr).abs() > 1e-9 {
        return Err(invalid("time step must divide every repetition time"));
    }
    Ok(steps as usize)
}

struct Aggregator {
    fine: [usize; 3],
    factor: [usize; 3],
}

impl Aggregator {
    fn cell_of(&self, idx: usize) -> usize {
        let [nx, ny, _] = self.fine;
        let (i, j, k) = (idx % nx, (idx / nx) % ny, idx / (nx * ny));
        let (ci, cj, ck) = (i / self.factor[0], j / self.factor[1], k / self.factor[2]);
        ci + COARSE_CELLS * (cj + COARSE_CELLS * ck)
    }

    fn sums(&self, field: &[f64], cell_index: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; COARSE_CELLS * COARSE_CELLS * COARSE_CELLS];
        for (v, &c) in field.iter().zip(cell_index) {
            out[c as usize] += v;
        }
        out
    }
}

/// Marches the phantom through every scan of `design`, recording per-cell
/// aggregates and signals at each scan time.
pub fn run_hf(
    grid: &PhantomGrid,
    params: &HfParams,
    design: &AcquisitionDesign,
    opts: &HfOptions,
) -> Result<CellGrid> {
    params.validate()?;
    if grid.vascular.len() != grid.len() || grid.domain.len() != grid.len() {
        return Err(invalid("grid fields have inconsistent lengths"));
    }
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(invalid("time step must be positive"));
    }
    let factor = coarse_factor(grid.dims)?;
    let steps: Vec<usize> = design.repetition_times()[1..]
        .iter()
        .map(|&tr| steps_for(tr, opts.dt))
        .collect::<Result<_>>()?;

    let agg = Aggregator {
        fine: grid.dims,
        factor,
    };
    let cell_index: Vec<u32> = (0..grid.len()).map(|i| agg.cell_of(i) as u32).collect();
    let n_cells = COARSE_CELLS * COARSE_CELLS * COARSE_CELLS;
    let per_cell = (factor[0] * factor[1] * factor[2]) as f64;
    let voxel_volume = grid.voxel_volume();
    let frac_mean: Vec<f64> = agg
        .sums(&grid.vascular, &cell_index)
        .into_iter()
        .map(|s| s / per_cell)
        .collect();

    let input = VascularInput::new(&params.model);
    let times = design.scan_times();
    let n = design.scans();
    let mut state = PhantomState::zeros(grid);
    let mut stepper = Stepper::new(grid, params, opts.cg);

    let mut q_p = Vec::with_capacity(n);
    let mut q_l = Vec::with_capacity(n);
    let mut sp = vec![Vec::with_capacity(n); n_cells];
    let mut sl = vec![Vec::with_capacity(n); n_cells];
    let mut peak = vec![0.0f64; n_cells];
    let mut worst = 0.0f64;

    for k in 0..n {
        // Re-anchor the clock to the scan time to avoid drift.
        state.time = times[k];
        let vasc = input.pyruvate(times[k]);
        let sum_p = agg.sums(&state.phi_p, &cell_index);
        let sum_l = agg.sums(&state.phi_l, &cell_index);
        let (sin_p, sin_l) = (math::sin(design.theta_p()[k]), math::sin(design.theta_l()[k]));
        for c in 0..n_cells {
            let vascular_mean = frac_mean[c] * vasc;
            peak[c] = peak[c].max(vascular_mean);
            let mut pyr = sum_p[c] / per_cell;
            if opts.include_vascular_signal {
                pyr += vascular_mean;
            }
            sp[c].push(sin_p * pyr);
            sl[c].push(sin_l * sum_l[c] / per_cell);
        }
        q_p.push(sum_p.iter().map(|s| s * voxel_volume).collect());
        q_l.push(sum_l.iter().map(|s| s * voxel_volume).collect());

        if k + 1 == n {
            break;
        }
        apply_excitation(&mut state, design.theta_p()[k], design.theta_l()[k]);
        for _ in 0..steps[k] {
            let t_new = state.time + opts.dt;
            stepper.step(&mut state, opts.dt, input.pyruvate(t_new))?;
            let (lo, hi) = state
                .phi_p
                .iter()
                .chain(&state.phi_l)
                .fold((0.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
            if lo < 0.0 && hi > 0.0 {
                let rel = lo / hi;
                worst = worst.min(rel);
                if rel < -opts.negativity_tolerance {
                    return Err(Error::NegativeField {
                        value: lo,
                        time: state.time,
                    });
                }
            }
        }
    }

    let signals = sp
        .into_iter()
        .zip(sl)
        .map(|(s_p, s_l)| SignalSeries {
            times: times.clone(),
            s_p,
            s_l,
        })
        .collect();
    Ok(CellGrid {
        coarse: [COARSE_CELLS; 3],
        cell_volume: voxel_volume * per_cell,
        times,
        q_p,
        q_l,
        signals,
        peak_vascular: peak,
        min_relative_field: worst,
        cg_iterations: stepper.cg_iterations,
    })
}
