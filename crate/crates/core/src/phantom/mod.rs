//! High-fidelity digital phantom.
//!
//! Interstitial pyruvate and lactate diffuse, relax and exchange on a
//! regular 3D voxel grid with no-flux boundaries. Pyruvate enters from a
//! prescribed vascular field, the vascular input scaled by each voxel's
//! blood volume fraction. Time stepping is backward Euler and the results
//! are aggregated onto a 16³ grid of cells.

mod cells;
mod geometry;
mod hf;

pub use cells::{convergence_error, convergence_errors, select_cells, SelectedCell, PEAK_BANDS};
pub use geometry::{
    build_phantom, format_voxel_list, parse_voxel_list, Axis, Cylinder, MaskFamily, PhantomGrid,
    PhantomSpec, VascularVoxel, COARSE_CELLS, DEFAULT_CELL_VOLUME,
};
pub use hf::{
    apply_excitation, hf_step, run_hf, CellGrid, CgOptions, HfOptions, HfParams, PhantomState,
};
