//! Experiment configuration file.
//!
//! One TOML file drives every subcommand. Every key is optional and unknown
//! keys are rejected; missing keys fall back to the built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hpmri_oed::phantom::{parse_voxel_list, Axis, Cylinder, MaskFamily};
use hpmri_oed::{
    AcquisitionDesign, AngleBounds, FitOptions, FreeParam, HfOptions, HfParams, ModelParams,
    OptimizeOptions, PhantomSpec, PriorSpec, REFERENCE_PEAK_PYRUVATE,
};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub design: DesignSection,
    pub prior: PriorSection,
    pub noise: NoiseSection,
    pub optimize: OptimizeSection,
    pub phantom: PhantomSection,
    pub validate: ValidateSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub t1p: f64,
    pub t1l: f64,
    pub kpl: f64,
    pub klp: f64,
    pub kve: f64,
    pub nu_e: f64,
    pub t0: f64,
    pub sigma_p: f64,
    pub alpha_p: f64,
    pub beta_p: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            t1p: p.t1p,
            t1l: p.t1l,
            kpl: p.kpl,
            klp: p.klp,
            kve: p.kve,
            nu_e: p.nu_e,
            t0: p.t0,
            sigma_p: p.sigma_p,
            alpha_p: p.alpha_p,
            beta_p: p.beta_p,
        }
    }
}

impl ModelSection {
    pub fn params(&self) -> Result<ModelParams> {
        let p = ModelParams {
            t1p: self.t1p,
            t1l: self.t1l,
            kpl: self.kpl,
            klp: self.klp,
            kve: self.kve,
            nu_e: self.nu_e,
            t0: self.t0,
            sigma_p: self.sigma_p,
            alpha_p: self.alpha_p,
            beta_p: self.beta_p,
        };
        p.validate().context("invalid [model] section")?;
        Ok(p)
    }
}

/// Acquisition timing and angles. A schedule file, when given, replaces the
/// constant angles.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSection {
    pub scans: usize,
    pub tr: f64,
    pub theta_p: f64,
    pub theta_l: f64,
    pub schedule: Option<PathBuf>,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self {
            scans: 30,
            tr: 3.0,
            theta_p: 20.0,
            theta_l: 30.0,
            schedule: None,
        }
    }
}

impl DesignSection {
    pub fn design(&self, base: &Path) -> Result<AcquisitionDesign> {
        match &self.schedule {
            Some(path) => read_schedule(&base.join(path), self.tr),
            None => constant_design(self.scans, self.tr, self.theta_p, self.theta_l),
        }
    }

    pub fn timing(&self) -> Result<AcquisitionDesign> {
        constant_design(self.scans, self.tr, 0.0, 0.0)
    }
}

pub fn constant_design(
    scans: usize,
    tr: f64,
    theta_p: f64,
    theta_l: f64,
) -> Result<AcquisitionDesign> {
    AcquisitionDesign::constant(scans, tr, theta_p, theta_l).context("invalid acquisition design")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRow {
    k: usize,
    #[allow(dead_code)]
    t: f64,
    #[serde(rename = "thetaP_deg")]
    theta_p: f64,
    #[serde(rename = "thetaL_deg")]
    theta_l: f64,
}

/// Reads a `k,t,thetaP_deg,thetaL_deg` schedule as written by `optimize`.
pub fn read_schedule(path: &Path, tr: f64) -> Result<AcquisitionDesign> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read schedule {}", path.display()))?;
    let mut p = Vec::new();
    let mut l = Vec::new();
    for (i, row) in reader.deserialize::<ScheduleRow>().enumerate() {
        let row = row.with_context(|| format!("bad schedule row in {}", path.display()))?;
        if row.k != i {
            bail!(
                "schedule {} must list scans in order from 0",
                path.display()
            );
        }
        p.push(row.theta_p);
        l.push(row.theta_l);
    }
    if p.is_empty() {
        bail!("schedule {} has no rows", path.display());
    }
    let mut timing = vec![tr; p.len()];
    timing[0] = 0.0;
    AcquisitionDesign::from_degrees(timing, &p, &l).context("invalid schedule")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    /// Means of (kPL, kve, t0).
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for PriorSection {
    fn default() -> Self {
        let p = PriorSpec::default();
        Self {
            mean: p.mean,
            std: p.std,
        }
    }
}

impl PriorSection {
    pub fn prior(&self) -> Result<PriorSpec> {
        PriorSpec::new(self.mean, self.std).context("invalid [prior] section")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub snr: Vec<f64>,
    pub s_ref: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            snr: vec![2.0, 20.0],
            s_ref: REFERENCE_PEAK_PYRUVATE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Constant,
    Varying,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Constant => "constant",
            Scheme::Varying => "varying",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSection {
    pub scheme: Scheme,
    pub order: usize,
    pub theta_p_bounds: [f64; 2],
    pub theta_l_bounds: [f64; 2],
    pub grid_points: usize,
    pub perturbations: usize,
    pub perturbation_deg: f64,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        let o = OptimizeOptions::default();
        Self {
            scheme: Scheme::Constant,
            order: 5,
            theta_p_bounds: [0.0, 90.0],
            theta_l_bounds: [0.0, 90.0],
            grid_points: o.grid_points,
            perturbations: o.perturbations,
            perturbation_deg: o.perturbation_deg,
        }
    }
}

impl OptimizeSection {
    pub fn bounds(&self) -> AngleBounds {
        AngleBounds {
            theta_p: (self.theta_p_bounds[0], self.theta_p_bounds[1]),
            theta_l: (self.theta_l_bounds[0], self.theta_l_bounds[1]),
        }
    }

    pub fn options(&self, seed: u64) -> OptimizeOptions {
        OptimizeOptions {
            grid_points: self.grid_points,
            perturbations: self.perturbations,
            perturbation_deg: self.perturbation_deg,
            seed,
            ..OptimizeOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Cylinders,
    Random,
    Voxels,
    Uniform,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderConfig {
    pub axis: String,
    /// Position in the plane normal to the axis (mm).
    pub center: [f64; 2],
    pub radius: f64,
    /// Extent along the axis (mm); the whole grid when absent.
    pub span: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub dims: [usize; 3],
    /// Voxel edge (mm); by default 16³ cells of the standard cell volume.
    pub spacing: Option<f64>,
    pub mask: MaskKind,
    /// Explicit vessels; the built-in layout is used when absent.
    pub cylinders: Option<Vec<CylinderConfig>>,
    pub density: f64,
    pub voxel_file: Option<PathBuf>,
    pub partial_volume: bool,
    pub seed: u64,
    pub dt: f64,
    pub include_vascular_signal: bool,
    pub dp: f64,
    pub dl: f64,
    pub lp: f64,
    pub ll: f64,
    pub dt_sequence: Vec<f64>,
    /// Grid edges for the refinement study, run at `grid_dt`.
    pub grid_sequence: Vec<usize>,
    pub grid_dt: f64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        let hf = HfParams::default();
        Self {
            dims: [32; 3],
            spacing: None,
            mask: MaskKind::Cylinders,
            cylinders: None,
            density: 0.01,
            voxel_file: None,
            partial_volume: true,
            seed: 0,
            dt: HfOptions::default().dt,
            include_vascular_signal: true,
            dp: hf.dp,
            dl: hf.dl,
            lp: hf.lp,
            ll: hf.ll,
            dt_sequence: vec![0.6, 0.3, 0.15, 0.075],
            grid_sequence: vec![16, 32, 48, 64],
            grid_dt: 0.075,
        }
    }
}

fn parse_axis(s: &str) -> Result<Axis> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "x" => Axis::X,
        "y" => Axis::Y,
        "z" => Axis::Z,
        other => bail!("unknown cylinder axis {other:?}"),
    })
}

impl PhantomSection {
    /// Phantom recipe with the grid edge replaced by `edge` when given.
    pub fn spec(&self, base: &Path, edge: Option<usize>) -> Result<PhantomSpec> {
        let dims = edge.map_or(self.dims, |n| [n; 3]);
        let desk = PhantomSpec::desk(dims[0]);
        let mask = match self.mask {
            MaskKind::Cylinders => match &self.cylinders {
                None => desk.mask.clone(),
                Some(list) => MaskFamily::Cylinders(
                    list.iter()
                        .map(|c| {
                            Ok(Cylinder {
                                axis: parse_axis(&c.axis)?,
                                center: c.center,
                                radius: c.radius,
                                span: c.span.map(|s| (s[0], s[1])),
                            })
                        })
                        .collect::<Result<_>>()?,
                ),
            },
            MaskKind::Random => MaskFamily::Random {
                density: self.density,
            },
            MaskKind::Voxels => {
                let path = self
                    .voxel_file
                    .as_ref()
                    .context("mask = \"voxels\" needs voxel_file")?;
                let path = base.join(path);
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("cannot read {}", path.display()))?;
                MaskFamily::Voxels(parse_voxel_list(&text).context("bad voxel list")?)
            }
            MaskKind::Uniform => MaskFamily::Uniform,
        };
        let spacing = match (edge, self.spacing) {
            (None, Some(h)) => h,
            // Refinement keeps the physical extent fixed.
            (Some(n), Some(h)) => h * self.dims[0] as f64 / n as f64,
            (_, None) => desk.spacing,
        };
        Ok(PhantomSpec {
            dims,
            spacing,
            mask,
            partial_volume: self.partial_volume,
            seed: self.seed,
        })
    }

    pub fn hf_params(&self, model: ModelParams) -> Result<HfParams> {
        let p = HfParams {
            model,
            dp: self.dp,
            dl: self.dl,
            lp: self.lp,
            ll: self.ll,
        };
        p.validate().context("invalid [phantom] constants")?;
        Ok(p)
    }

    pub fn options(&self, dt: f64) -> HfOptions {
        HfOptions {
            dt,
            include_vascular_signal: self.include_vascular_signal,
            ..HfOptions::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedDesign {
    pub name: String,
    #[serde(default)]
    pub theta_p: f64,
    #[serde(default)]
    pub theta_l: f64,
    /// Schedule file replacing the constant angles.
    pub schedule: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    pub snr_data: Vec<f64>,
    pub replicates: usize,
    /// Parameters adjusted by each fit: any of "kpl", "kve", "t0".
    pub free: Vec<String>,
    pub designs: Vec<NamedDesign>,
}

impl Default for ValidateSection {
    fn default() -> Self {
        let named = |name: &str, theta_p, theta_l| NamedDesign {
            name: name.to_owned(),
            theta_p,
            theta_l,
            schedule: None,
        };
        Self {
            snr_data: vec![2.0, 5.0, 10.0, 15.0, 20.0],
            replicates: 25,
            free: vec!["kpl".into(), "kve".into(), "t0".into()],
            designs: vec![
                named("oed2", 35.0, 28.0),
                named("oed20", 3.0, 28.0),
                named("clinical", 20.0, 30.0),
            ],
        }
    }
}

impl ValidateSection {
    pub fn fit_options(&self) -> Result<FitOptions> {
        let free = self
            .free
            .iter()
            .map(|s| {
                Ok(match s.to_ascii_lowercase().as_str() {
                    "kpl" => FreeParam::Kpl,
                    "kve" => FreeParam::Kve,
                    "t0" => FreeParam::T0,
                    other => bail!("unknown free parameter {other:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if !free.contains(&FreeParam::Kpl) {
            bail!("[validate] free parameters must include kpl");
        }
        Ok(FitOptions {
            free,
            ..FitOptions::default()
        })
    }

    pub fn check(&self) -> Result<()> {
        if self.replicates == 0 {
            bail!("[validate] replicates must be at least 1");
        }
        if self.snr_data.is_empty() || self.snr_data.iter().any(|s| !(*s > 0.0)) {
            bail!("[validate] snr_data must be a nonempty list of positive values");
        }
        if self.designs.is_empty() {
            bail!("[validate] needs at least one design");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            threads: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("config error: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }
}
