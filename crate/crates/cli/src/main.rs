//! `hpoed`: flip-angle design and validation for hyperpolarized 13C MRI.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::{RunContext, Source};
use config::{ExperimentConfig, Scheme};

#[derive(Parser)]
#[command(name = "hpoed", version, about)]
struct Cli {
    /// TOML experiment file; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the two-compartment model for the configured design.
    SimulateLf,
    /// Run the reaction-diffusion phantom and write per-cell signals.
    SimulateHf {
        /// Also run the time-step and grid refinement studies.
        #[arg(long)]
        convergence: bool,
        /// Time step (s).
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Maximize mutual information over flip angles.
    Optimize {
        #[arg(long, value_enum)]
        scheme: Option<Scheme>,
        /// Comma-separated SNR values.
        #[arg(long, value_delimiter = ',')]
        snr: Option<Vec<f64>>,
        /// Gauss-Hermite points per parameter.
        #[arg(long)]
        order: Option<usize>,
        /// Pyruvate angle bounds in degrees, as LO,HI.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        theta_p_bounds: Option<Vec<f64>>,
        /// Lactate angle bounds in degrees, as LO,HI.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        theta_l_bounds: Option<Vec<f64>>,
    },
    /// Fit noisy synthetic data and summarize recovered kPL.
    Validate {
        #[arg(long, value_enum, default_value = "lf")]
        source: Source,
        /// Noisy copies per SNR level.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Time-step and grid refinement studies of the phantom.
    Convergence,
}

fn run(cli: Cli) -> Result<bool> {
    let (mut config, base) = match &cli.config {
        Some(path) => (
            ExperimentConfig::load(path)?,
            path.parent().map(PathBuf::from).unwrap_or_default(),
        ),
        None => (ExperimentConfig::default(), PathBuf::new()),
    };
    if let Some(n) = cli.threads {
        config.run.threads = n;
    }
    if config.run.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.run.threads)
            .build_global()
            .context("cannot start the worker pool")?;
    }
    let out = cli.out.clone().unwrap_or_else(|| config.run.out.clone());
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let seed = cli.seed.unwrap_or(config.run.seed);

    let outcome = match cli.command {
        Command::SimulateLf => commands::simulate_lf_cmd(&RunContext {
            config,
            base,
            out,
            seed,
        })?,
        Command::SimulateHf { convergence, dt } => {
            if let Some(dt) = dt {
                config.phantom.dt = dt;
            }
            commands::simulate_hf_cmd(
                &RunContext {
                    config,
                    base,
                    out,
                    seed,
                },
                convergence,
            )?
        }
        Command::Optimize {
            scheme,
            snr,
            order,
            theta_p_bounds,
            theta_l_bounds,
        } => {
            if let Some(b) = theta_p_bounds {
                config.optimize.theta_p_bounds = [b[0], b[1]];
            }
            if let Some(b) = theta_l_bounds {
                config.optimize.theta_l_bounds = [b[0], b[1]];
            }
            let scheme = scheme.unwrap_or(config.optimize.scheme);
            let snr = snr.unwrap_or_else(|| config.noise.snr.clone());
            let order = order.unwrap_or(config.optimize.order);
            commands::optimize_cmd(
                &RunContext {
                    config,
                    base,
                    out,
                    seed,
                },
                scheme,
                &snr,
                order,
            )?
        }
        Command::Validate { source, replicates } => {
            if let Some(r) = replicates {
                config.validate.replicates = r;
            }
            commands::validate_cmd(
                &RunContext {
                    config,
                    base,
                    out,
                    seed,
                },
                source,
            )?
        }
        Command::Convergence => commands::convergence_cmd(&RunContext {
            config,
            base,
            out,
            seed,
        })?,
    };
    Ok(outcome.converged)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: some fits or optimizations did not converge");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
