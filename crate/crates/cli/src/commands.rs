use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hpmri_oed::{
    build_phantom, convergence_errors, optimize_constant_flip, optimize_varying_flip, run_hf,
    select_cells, simulate_lf, validate_hf, validate_lf, AcquisitionDesign, CellGrid,
    DesignOptimum, InformationModel, NoiseModel,
};

use crate::config::{constant_design, ExperimentConfig, Scheme};
use crate::plot::{Chart, Series};

/// Everything a command needs besides its own flags.
pub struct RunContext {
    pub config: ExperimentConfig,
    /// Directory that relative paths inside the config resolve against.
    pub base: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
}

/// Whether every fit or optimization in a command met its stopping test.
#[must_use]
pub struct Outcome {
    pub converged: bool,
}

/// Shortest text that parses back to the same value.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_svg(path: &Path, chart: &Chart) -> Result<()> {
    fs::write(path, chart.render()).with_context(|| format!("cannot write {}", path.display()))
}

fn label(v: f64) -> String {
    format!("{v}")
}

pub fn simulate_lf_cmd(ctx: &RunContext) -> Result<Outcome> {
    let params = ctx.config.model.params()?;
    let design = ctx.config.design.design(&ctx.base)?;
    let (signals, states) = simulate_lf(&params, &design)?;

    let rows: Vec<_> = (0..signals.len())
        .map(|k| {
            vec![
                num(signals.times[k]),
                num(signals.s_p[k]),
                num(signals.s_l[k]),
            ]
        })
        .collect();
    write_csv(&ctx.out.join("signals.csv"), &["t", "sP", "sL"], &rows)?;
    let rows: Vec<_> = states
        .iter()
        .zip(&signals.times)
        .map(|(s, t)| vec![num(*t), num(s.phi_p), num(s.phi_l)])
        .collect();
    write_csv(
        &ctx.out.join("magnetization.csv"),
        &["t", "phiP", "phiL"],
        &rows,
    )?;

    let t = &signals.times;
    let mut chart = Chart::new("Transverse signal", "t (s)", "signal");
    chart.series.push(Series::line(
        "sP",
        t.iter().copied().zip(signals.s_p.iter().copied()).collect(),
    ));
    chart.series.push(Series::line(
        "sL",
        t.iter().copied().zip(signals.s_l.iter().copied()).collect(),
    ));
    write_svg(&ctx.out.join("signals.svg"), &chart)?;
    let mut chart = Chart::new("Longitudinal magnetization", "t (s)", "magnetization");
    chart.series.push(Series::line(
        "phiP",
        t.iter().zip(&states).map(|(t, s)| (*t, s.phi_p)).collect(),
    ));
    chart.series.push(Series::line(
        "phiL",
        t.iter().zip(&states).map(|(t, s)| (*t, s.phi_l)).collect(),
    ));
    write_svg(&ctx.out.join("magnetization.svg"), &chart)?;

    println!("peak sP = {}", num(signals.peak_pyruvate()));
    Ok(Outcome { converged: true })
}

fn schedule_rows(design: &AcquisitionDesign) -> Vec<Vec<String>> {
    let t = design.scan_times();
    let p = design.theta_p_deg();
    let l = design.theta_l_deg();
    (0..design.scans())
        .map(|k| vec![k.to_string(), num(t[k]), num(p[k]), num(l[k])])
        .collect()
}

pub fn optimize_cmd(
    ctx: &RunContext,
    scheme: Scheme,
    snrs: &[f64],
    order: usize,
) -> Result<Outcome> {
    let cfg = &ctx.config;
    let params = cfg.model.params()?;
    let prior = cfg.prior.prior()?;
    let timing = cfg.design.timing()?;
    let bounds = cfg.optimize.bounds();
    let opts = cfg.optimize.options(ctx.seed);
    anyhow::ensure!(!snrs.is_empty(), "no SNR values given");

    let mut summary = Vec::new();
    let mut all_converged = true;
    for &snr in snrs {
        let noise = NoiseModel::from_snr(snr, cfg.noise.s_ref, timing.scans())?;
        let model =
            InformationModel::new(&params, &prior, &noise, order, timing.repetition_times())?;
        let best: DesignOptimum = match scheme {
            Scheme::Constant => optimize_constant_flip(&model, &bounds, &opts)?,
            Scheme::Varying => optimize_varying_flip(&model, &bounds, None, &opts)?,
        };
        all_converged &= best.converged;
        let design = &best.result.design;
        let stem = format!("schedule_{}_snr{}", scheme.name(), label(snr));
        write_csv(
            &ctx.out.join(format!("{stem}.csv")),
            &["k", "t", "thetaP_deg", "thetaL_deg"],
            &schedule_rows(design),
        )?;
        let t = design.scan_times();
        let mut chart = Chart::new(
            &format!("Flip angles, {} scheme, SNR {}", scheme.name(), label(snr)),
            "t (s)",
            "angle (deg)",
        );
        chart.series.push(Series::line(
            "thetaP",
            t.iter().copied().zip(design.theta_p_deg()).collect(),
        ));
        chart.series.push(Series::line(
            "thetaL",
            t.iter().copied().zip(design.theta_l_deg()).collect(),
        ));
        write_svg(&ctx.out.join(format!("{stem}.svg")), &chart)?;

        let r = &best.result;
        let row = vec![
            label(snr),
            scheme.name().to_owned(),
            num(r.mi),
            num(r.h_z),
            num(r.h_z_given_p),
            best.converged.to_string(),
        ];
        println!("{}", row.join(","));
        summary.push(row);
    }
    eprintln!("quadrature order {order} ({} nodes)", order * order * order);
    write_csv(
        &ctx.out.join(format!("summary_{}.csv", scheme.name())),
        &[
            "snr",
            "scheme",
            "MI_nats",
            "H_z",
            "H_z_given_P",
            "converged",
        ],
        &summary,
    )?;
    Ok(Outcome {
        converged: all_converged,
    })
}

fn run_phantom(
    ctx: &RunContext,
    edge: Option<usize>,
    design: &AcquisitionDesign,
    dt: f64,
) -> Result<CellGrid> {
    let cfg = &ctx.config;
    let spec = cfg.phantom.spec(&ctx.base, edge)?;
    let grid = build_phantom(&spec)?;
    let params = cfg.phantom.hf_params(cfg.model.params()?)?;
    let cells = run_hf(&grid, &params, design, &cfg.phantom.options(dt))?;
    eprintln!(
        "phantom {}x{}x{} dt={}: {} CG iterations",
        spec.dims[0], spec.dims[1], spec.dims[2], dt, cells.cg_iterations
    );
    Ok(cells)
}

pub fn simulate_hf_cmd(ctx: &RunContext, convergence: bool) -> Result<Outcome> {
    let design = ctx.config.design.design(&ctx.base)?;
    let cells = run_phantom(ctx, None, &design, ctx.config.phantom.dt)?;

    let mut rows = Vec::with_capacity(cells.cells() * design.scans());
    for (c, s) in cells.signals.iter().enumerate() {
        for k in 0..s.len() {
            rows.push(vec![
                c.to_string(),
                k.to_string(),
                num(s.times[k]),
                num(s.s_p[k]),
                num(s.s_l[k]),
                num(cells.peak_vascular[c]),
            ]);
        }
    }
    write_csv(
        &ctx.out.join("cells.csv"),
        &["cell", "k", "t", "sP", "sL", "peak_phiPV"],
        &rows,
    )?;

    let selected = select_cells(&cells).context("cell selection failed")?;
    let rows: Vec<_> = selected
        .iter()
        .map(|s| vec![s.cell.to_string(), s.band.to_string(), num(s.peak)])
        .collect();
    write_csv(
        &ctx.out.join("selected_cells.csv"),
        &["cell", "band", "peak_phiPV"],
        &rows,
    )?;

    let mut chart = Chart::new("Pyruvate signal, one cell per band", "t (s)", "sP");
    for band in 1..=4 {
        if let Some(s) = selected.iter().find(|s| s.band == band) {
            let sig = &cells.signals[s.cell];
            chart.series.push(Series::line(
                format!("band {band} cell {}", s.cell),
                sig.times
                    .iter()
                    .copied()
                    .zip(sig.s_p.iter().copied())
                    .collect(),
            ));
        }
    }
    write_svg(&ctx.out.join("cells.svg"), &chart)?;

    if convergence {
        convergence_cmd(ctx)
    } else {
        Ok(Outcome { converged: true })
    }
}

/// Errors of each run against the last run of the sequence.
fn study(runs: &[(String, CellGrid)], kind: &str) -> Result<(Vec<Vec<String>>, Chart)> {
    let (ref_name, reference) = runs.last().context("empty refinement sequence")?;
    let mut rows = Vec::new();
    let mut chart = Chart::new(&format!("Convergence in {kind}"), "t (s)", "error");
    chart.log_y = true;
    for (name, run) in &runs[..runs.len() - 1] {
        let errs = convergence_errors(run, reference)?;
        for &(t, ep, el) in &errs {
            rows.push(vec![
                num(t),
                num(ep),
                num(el),
                name.clone(),
                ref_name.clone(),
            ]);
        }
        chart.series.push(Series::line(
            format!("eP {name}"),
            errs.iter().map(|e| (e.0, e.1)).collect(),
        ));
        chart.series.push(Series::line(
            format!("eL {name}"),
            errs.iter().map(|e| (e.0, e.2)).collect(),
        ));
    }
    Ok((rows, chart))
}

pub fn convergence_cmd(ctx: &RunContext) -> Result<Outcome> {
    let ph = &ctx.config.phantom;
    let design = ctx.config.design.design(&ctx.base)?;
    anyhow::ensure!(
        ph.dt_sequence.len() >= 2,
        "dt_sequence needs at least two entries"
    );

    let mut runs = Vec::new();
    for &dt in &ph.dt_sequence {
        runs.push((
            format!("dt={}", label(dt)),
            run_phantom(ctx, None, &design, dt)?,
        ));
    }
    let (mut rows, chart) = study(&runs, "time step")?;
    write_svg(&ctx.out.join("convergence_dt.svg"), &chart)?;

    if ph.grid_sequence.len() >= 2 {
        let mut runs = Vec::new();
        for &n in &ph.grid_sequence {
            runs.push((
                format!("n={n}"),
                run_phantom(ctx, Some(n), &design, ph.grid_dt)?,
            ));
        }
        let (grid_rows, chart) = study(&runs, "grid spacing")?;
        rows.extend(grid_rows);
        write_svg(&ctx.out.join("convergence_grid.svg"), &chart)?;
    }
    write_csv(
        &ctx.out.join("convergence.csv"),
        &["t", "eP", "eL", "pairA", "pairB"],
        &rows,
    )?;
    Ok(Outcome { converged: true })
}

fn validation_designs(ctx: &RunContext) -> Result<Vec<(String, AcquisitionDesign)>> {
    let d = &ctx.config.design;
    ctx.config
        .validate
        .designs
        .iter()
        .map(|nd| {
            let design = match &nd.schedule {
                Some(path) => crate::config::read_schedule(&ctx.base.join(path), d.tr)?,
                None => constant_design(d.scans, d.tr, nd.theta_p, nd.theta_l)?,
            };
            Ok((nd.name.clone(), design))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Source {
    Lf,
    Hf,
}

pub fn validate_cmd(ctx: &RunContext, source: Source) -> Result<Outcome> {
    let v = &ctx.config.validate;
    v.check()?;
    let opts = v.fit_options()?;
    let params = ctx.config.model.params()?;
    let designs = validation_designs(ctx)?;
    let mut converged = true;

    for (name, design) in &designs {
        match source {
            Source::Lf => {
                let stats =
                    validate_lf(design, &params, &v.snr_data, v.replicates, ctx.seed, &opts)?;
                converged &= stats.iter().all(|s| s.n_converged == s.n);
                let rows: Vec<_> = stats
                    .iter()
                    .map(|s| {
                        vec![
                            label(s.snr_data),
                            num(s.mean_kpl),
                            num(s.std_kpl),
                            s.n_converged.to_string(),
                        ]
                    })
                    .collect();
                write_csv(
                    &ctx.out.join(format!("validate_lf_{name}.csv")),
                    &["snr_data", "mean_kPL", "std_kPL", "n_converged"],
                    &rows,
                )?;
                let mut chart =
                    Chart::new(&format!("Recovered kPL, LF data, {name}"), "SNR", "kPL");
                chart.series.push(Series {
                    label: "mean ± std".into(),
                    points: stats.iter().map(|s| (s.snr_data, s.mean_kpl)).collect(),
                    errors: Some(stats.iter().map(|s| s.std_kpl).collect()),
                });
                chart.series.push(Series::line(
                    "truth",
                    stats.iter().map(|s| (s.snr_data, params.kpl)).collect(),
                ));
                write_svg(&ctx.out.join(format!("validate_lf_{name}.svg")), &chart)?;
            }
            Source::Hf => {
                let cells = run_phantom(ctx, None, design, ctx.config.phantom.dt)?;
                let selected = select_cells(&cells).context("cell selection failed")?;
                let recs = validate_hf(
                    &cells,
                    &selected,
                    design,
                    &params,
                    &v.snr_data,
                    v.replicates,
                    ctx.seed,
                    &opts,
                )?;
                let mut rows = Vec::new();
                for r in &recs {
                    converged &= r.usable && r.noiseless_kpl.is_some();
                    let noiseless = num(r.noiseless_kpl.unwrap_or(f64::NAN));
                    for (i, &snr) in v.snr_data.iter().enumerate() {
                        let (mean, std) = match r.stats.get(i) {
                            Some(s) => {
                                converged &= s.n_converged == s.n;
                                (s.mean_kpl, s.std_kpl)
                            }
                            None => (f64::NAN, f64::NAN),
                        };
                        rows.push(vec![
                            r.cell.to_string(),
                            r.band.to_string(),
                            label(snr),
                            num(mean),
                            num(std),
                            noiseless.clone(),
                        ]);
                    }
                }
                write_csv(
                    &ctx.out.join(format!("validate_hf_{name}.csv")),
                    &[
                        "cell",
                        "band",
                        "snr_data",
                        "mean_kPL",
                        "std_kPL",
                        "noiseless_kPL",
                    ],
                    &rows,
                )?;
                let last = v.snr_data.len() - 1;
                let mut chart = Chart::new(
                    &format!(
                        "Recovered kPL per cell at SNR {}, {name}",
                        label(v.snr_data[last])
                    ),
                    "log10 peak vascular pyruvate",
                    "kPL",
                );
                let usable: Vec<_> = recs.iter().filter(|r| r.stats.len() > last).collect();
                chart.series.push(Series {
                    label: "noisy mean ± std".into(),
                    points: usable
                        .iter()
                        .map(|r| (r.peak_vascular.log10(), r.stats[last].mean_kpl))
                        .collect(),
                    errors: Some(usable.iter().map(|r| r.stats[last].std_kpl).collect()),
                });
                chart.series.push(Series {
                    label: "noiseless".into(),
                    points: recs
                        .iter()
                        .filter_map(|r| r.noiseless_kpl.map(|k| (r.peak_vascular.log10(), k)))
                        .collect(),
                    errors: Some(vec![
                        0.0;
                        recs.iter()
                            .filter(|r| r.noiseless_kpl.is_some())
                            .count()
                    ]),
                });
                write_svg(&ctx.out.join(format!("validate_hf_{name}.svg")), &chart)?;
            }
        }
    }
    Ok(Outcome { converged })
}
