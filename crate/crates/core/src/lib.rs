//! Optimal flip-angle design for hyperpolarized [1-13C]-pyruvate MRI.
//!
//! The crate is organised around four numerical subsystems:
//!
//! - [`kinetics`]: the spatially invariant two-compartment exchange model
//!   (state propagation between scans, vascular input, acquired signals).
//! - [`information`]: mutual information between the summed signal and the
//!   uncertain kinetic parameters, evaluated with tensor Gauss-Hermite
//!   quadrature, plus constant and per-scan flip-angle optimizers.
//! - [`phantom`]: a reaction-diffusion digital phantom on a regular 3D grid
//!   used as an independent, spatially resolved data generator.
//! - [`inference`]: noisy replicate generation, bound-constrained
//!   least-squares recovery of the rate parameters, and recovery statistics.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature. The `parallel` feature spreads quadrature-node, multi-start
//! and replicate work across a rayon pool; every reduction is done in a fixed
//! order so results do not depend on the thread count.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
mod math;
mod par;

pub mod boxopt;
pub mod information;
pub mod inference;
pub mod kinetics;
pub mod linalg;
pub mod ode;
pub mod phantom;
pub mod quadrature;

pub use error::{Error, Result};
pub use information::{
    conditional_entropy, evidence_entropy, evidence_entropy_converged, gauss_hermite_3d,
    mutual_information, optimize_constant_flip, optimize_varying_flip, sigma_from_snr,
    AngleBounds, ConvergedEntropy, DesignOptimum, InformationModel, MiResult, NoiseModel,
    OptimizeOptions, PriorSpec, QuadratureGrid, REFERENCE_PEAK_PYRUVATE,
};
pub use inference::{
    add_noise, fit_lf, validate_hf, validate_lf, CellRecovery, FitOptions, FitResult, FreeParam,
    NoiseRule, NoisyDataset, RecoveryStats,
};
pub use kinetics::{
    gamma_pdf, propagate_interval, simulate_lf, system_matrix, total_signal, vif,
    AcquisitionDesign, MagnetizationState, ModelParams, ScanPropagator, SignalSeries,
};
pub use phantom::{
    apply_excitation, build_phantom, convergence_error, convergence_errors, hf_step, run_hf,
    select_cells, CellGrid, HfOptions, HfParams, PhantomGrid, PhantomSpec, PhantomState,
    SelectedCell,
};
