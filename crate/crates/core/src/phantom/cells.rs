use alloc::vec::Vec;

use super::hf::CellGrid;
use crate::error::{invalid, Error, Result};
use crate::math;

/// Peak vascular pyruvate bands `(lower, upper]` and the number of cells
/// drawn from each.
pub const PEAK_BANDS: [(f64, f64, usize); 4] = [
    (0.1, 1.0, 7),
    (0.01, 0.1, 12),
    (0.001, 0.01, 4),
    (0.0, 0.001, 2),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedCell {
    pub cell: usize,
    /// 1-based band number, 1 being the highest peaks.
    pub band: usize,
    pub peak: f64,
}

/// Picks cells per peak band, largest peaks first, ties to the lowest index.
pub fn select_cells(cells: &CellGrid) -> Result<Vec<SelectedCell>> {
    let mut out = Vec::new();
    for (b, &(lo, hi, count)) in PEAK_BANDS.iter().enumerate() {
        let mut candidates: Vec<(usize, f64)> = cells
            .peak_vascular
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > lo && p <= hi)
            .map(|(i, &p)| (i, p))
            .collect();
        if candidates.len() < count {
            return Err(Error::BandShortage {
                band: b + 1,
                available: candidates.len(),
                required: count,
            });
        }
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.extend(candidates[..count].iter().map(|&(cell, peak)| SelectedCell {
            cell,
            band: b + 1,
            peak,
        }));
    }
    Ok(out)
}

fn same_layout(a: &CellGrid, b: &CellGrid) -> Result<()> {
    let volume_match = (a.cell_volume - b.cell_volume).abs() <= 1e-9 * a.cell_volume.abs().max(1.0);
    if a.coarse != b.coarse || a.cells() != b.cells() || !volume_match {
        return Err(invalid("runs are aggregated on different cell grids"));
    }
    if a.times.len() != b.times.len()
        || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-9)
    {
        return Err(invalid("runs have different scan times"));
    }
    Ok(())
}

fn error_at(a: &CellGrid, b: &CellGrid, k: usize) -> (f64, f64) {
    let norm = |x: &[f64], y: &[f64]| {
        let s: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
        math::sqrt(s) / math::sqrt(a.cell_volume)
    };
    (norm(&a.q_p[k], &b.q_p[k]), norm(&a.q_l[k], &b.q_l[k]))
}

/// Aggregate discrepancy `(eP, eL)` between two runs at scan time `t`.
pub fn convergence_error(a: &CellGrid, b: &CellGrid, t: f64) -> Result<(f64, f64)> {
    same_layout(a, b)?;
    let k = a
        .times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-9)
        .ok_or_else(|| invalid("time is not a recorded scan time"))?;
    Ok(error_at(a, b, k))
}

/// `(t, eP, eL)` at every scan time.
pub fn convergence_errors(a: &CellGrid, b: &CellGrid) -> Result<Vec<(f64, f64, f64)>> {
    same_layout(a, b)?;
    Ok((0..a.times.len())
        .map(|k| {
            let (ep, el) = error_at(a, b, k);
            (a.times[k], ep, el)
        })
        .collect())
}
