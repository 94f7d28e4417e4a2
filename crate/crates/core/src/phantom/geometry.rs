use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

/// Coarse aggregation grid edge, in cells.
pub const COARSE_CELLS: usize = 16;

/// Volume of one coarse cell (mm³) in the default phantom.
pub const DEFAULT_CELL_VOLUME: f64 = 1042.672;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Straight vessel of circular cross-section, in physical coordinates (mm)
/// measured from the grid corner.
#[derive(Debug, Clone, PartialEq)]
pub struct Cylinder {
    pub axis: Axis,
    /// Centre of the cross-section in the two remaining axes, in x, y, z order.
    pub center: [f64; 2],
    pub radius: f64,
    /// Extent along the axis; `None` spans the whole grid.
    pub span: Option<(f64, f64)>,
}

/// One explicitly listed vascular voxel and its blood volume fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VascularVoxel {
    pub index: [usize; 3],
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskFamily {
    Cylinders(Vec<Cylinder>),
    /// Each voxel is fully vascular with probability `density`.
    Random { density: f64 },
    Voxels(Vec<VascularVoxel>),
    /// Every voxel is fully vascular.
    Uniform,
}

/// Recipe for a synthetic phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    /// Voxel edge length (mm).
    pub spacing: f64,
    pub mask: MaskFamily,
    /// Cylinders contribute the covered area fraction of each voxel when
    /// true, and 0/1 by voxel centre when false.
    pub partial_volume: bool,
    pub seed: u64,
}

impl Default for PhantomSpec {
    /// 32³ voxels whose 16³ aggregation cells have the default cell volume,
    /// crossed by six vessels sized so that every peak band is populated.
    fn default() -> Self {
        Self::desk(32)
    }
}

impl PhantomSpec {
    /// The default vessel layout on an `n³` grid (`n` a multiple of 16).
    pub fn desk(n: usize) -> Self {
        let cell = libm::cbrt(DEFAULT_CELL_VOLUME);
        // Off-centre positions keep every grid in the refinement sequence from
        // sharing a symmetry with the vessels.
        let at = |c: usize, off: f64| (c as f64 + off) * cell;
        let cyl = |axis, a: usize, b: usize, radius, span: Option<(usize, usize)>| Cylinder {
            axis,
            center: [at(a, 0.37), at(b, 0.61)],
            radius,
            span: span.map(|(s, e)| (s as f64 * cell, e as f64 * cell)),
        };
        Self {
            dims: [n; 3],
            spacing: cell * COARSE_CELLS as f64 / n as f64,
            mask: MaskFamily::Cylinders(vec![
                cyl(Axis::Z, 3, 4, 1.6, None),
                cyl(Axis::X, 10, 5, 1.0, Some((2, 14))),
                cyl(Axis::Y, 12, 11, 0.45, None),
                cyl(Axis::Z, 8, 13, 0.3, Some((0, 8))),
                cyl(Axis::X, 2, 13, 0.12, None),
                cyl(Axis::Z, 13, 1, 0.05, None),
            ]),
            partial_volume: true,
            seed: 0,
        }
    }
}

/// Regular voxel grid with a blood volume fraction per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomGrid {
    pub dims: [usize; 3],
    pub spacing: f64,
    /// Vascular volume fraction in `[0, 1]`; positive entries form the
    /// vascular mask.
    pub vascular: Vec<f64>,
    /// Tissue voxels; the PDE lives on these.
    pub domain: Vec<bool>,
}

impl PhantomGrid {
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index with x fastest.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn vascular_mask(&self) -> Vec<bool> {
        self.vascular.iter().map(|&f| f > 0.0).collect()
    }

    /// Blood volume over tissue volume.
    pub fn vascular_fraction(&self) -> f64 {
        let tissue = self.domain.iter().filter(|&&d| d).count();
        let blood: f64 = self
            .vascular
            .iter()
            .zip(&self.domain)
            .filter(|(_, &d)| d)
            .map(|(f, _)| f)
            .sum();
        blood / tissue as f64
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing * self.spacing * self.spacing
    }

    /// Listed vascular voxels in linear-index order.
    pub fn vascular_voxels(&self) -> Vec<VascularVoxel> {
        let [nx, ny, _] = self.dims;
        self.vascular
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 0.0)
            .map(|(idx, &fraction)| VascularVoxel {
                index: [idx % nx, (idx / nx) % ny, idx / (nx * ny)],
                fraction,
            })
            .collect()
    }
}

// Area of the disc of radius r at the origin within [x0, x1] × [y0, y1].
fn disc_rect_area(r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let a = disc_corner_area(r, x1, y1) - disc_corner_area(r, x0, y1) - disc_corner_area(r, x1, y0)
        + disc_corner_area(r, x0, y0);
    a.max(0.0)
}

// Area of the disc within {u <= x, v <= y}, integrating chord lengths in u.
fn disc_corner_area(r: f64, x: f64, y: f64) -> f64 {
    let xm = x.min(r);
    if xm <= -r || y <= -r {
        return 0.0;
    }
    // Antiderivative of the half-chord sqrt(r² - u²).
    let half = |u: f64| {
        let u = u.clamp(-r, r);
        0.5 * (u * libm::sqrt((r * r - u * u).max(0.0)) + r * r * libm::asin(u / r))
    };
    if y >= r {
        return 2.0 * (half(xm) - half(-r));
    }
    let s = libm::sqrt(r * r - y * y);
    let clip = |lo: f64, hi: f64| (lo.max(-r), hi.min(xm));
    let mut area = 0.0;
    // Middle band: the chord is cut at v = y.
    let (m0, m1) = clip(-s, s);
    if m1 > m0 {
        area += y * (m1 - m0) + half(m1) - half(m0);
    }
    // Outer bands: whole chord below y when y >= 0, nothing otherwise.
    if y >= 0.0 {
        for (lo, hi) in [(-r, -s), (s, r)] {
            let (o0, o1) = clip(lo, hi);
            if o1 > o0 {
                area += 2.0 * (half(o1) - half(o0));
            }
        }
    }
    area
}

fn cylinder_fraction(c: &Cylinder, lo: [f64; 3], h: f64, partial: bool) -> f64 {
    let (along, a, b) = match c.axis {
        Axis::X => (0, 1, 2),
        Axis::Y => (1, 0, 2),
        Axis::Z => (2, 0, 1),
    };
    let axial = match c.span {
        None => 1.0,
        Some((s, e)) => {
            let (v0, v1) = (lo[along], lo[along] + h);
            if partial {
                ((v1.min(e) - v0.max(s)).max(0.0)) / h
            } else {
                let mid = v0 + 0.5 * h;
                if mid >= s && mid < e {
                    1.0
                } else {
                    0.0
                }
            }
        }
    };
    if axial == 0.0 {
        return 0.0;
    }
    let r2 = c.radius * c.radius;
    let inside = |u: f64, v: f64| {
        let du = u - c.center[0];
        let dv = v - c.center[1];
        du * du + dv * dv <= r2
    };
    let area = if partial {
        let (u0, v0) = (lo[a] - c.center[0], lo[b] - c.center[1]);
        disc_rect_area(c.radius, u0, u0 + h, v0, v0 + h) / (h * h)
    } else if inside(lo[a] + 0.5 * h, lo[b] + 0.5 * h) {
        1.0
    } else {
        0.0
    };
    area * axial
}

/// Builds the voxel grid for a spec. Fails when no voxel is vascular.
pub fn build_phantom(spec: &PhantomSpec) -> Result<PhantomGrid> {
    let [nx, ny, nz] = spec.dims;
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::InvalidSpec("grid dimensions must be positive".into()));
    }
    if !(spec.spacing > 0.0 && spec.spacing.is_finite()) {
        return Err(Error::InvalidSpec("spacing must be positive".into()));
    }
    let n = nx * ny * nz;
    let h = spec.spacing;
    let mut vascular = vec![0.0; n];
    match &spec.mask {
        MaskFamily::Cylinders(cyls) => {
            for c in cyls {
                if !(c.radius > 0.0 && c.radius.is_finite()) {
                    return Err(Error::InvalidSpec("cylinder radius must be positive".into()));
                }
            }
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let lo = [i as f64 * h, j as f64 * h, k as f64 * h];
                        let f: f64 = cyls
                            .iter()
                            .map(|c| cylinder_fraction(c, lo, h, spec.partial_volume))
                            .sum();
                        vascular[i + nx * (j + ny * k)] = f.min(1.0);
                    }
                }
            }
        }
        MaskFamily::Random { density } => {
            if !(0.0..=1.0).contains(density) {
                return Err(Error::InvalidSpec("density must lie in [0, 1]".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let u = Uniform::new(0.0, 1.0).expect("unit interval");
            for v in vascular.iter_mut() {
                if u.sample(&mut rng) < *density {
                    *v = 1.0;
                }
            }
        }
        MaskFamily::Voxels(list) => {
            for vox in list {
                let [i, j, k] = vox.index;
                if i >= nx || j >= ny || k >= nz {
                    return Err(Error::InvalidSpec(format!(
                        "voxel ({i}, {j}, {k}) lies outside the grid"
                    )));
                }
                if !(vox.fraction > 0.0 && vox.fraction <= 1.0) {
                    return Err(Error::InvalidSpec(format!(
                        "voxel ({i}, {j}, {k}) fraction must lie in (0, 1]"
                    )));
                }
                vascular[i + nx * (j + ny * k)] = vox.fraction;
            }
        }
        MaskFamily::Uniform => vascular.iter_mut().for_each(|v| *v = 1.0),
    }
    if vascular.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidSpec("vascular mask is empty".into()));
    }
    Ok(PhantomGrid {
        dims: spec.dims,
        spacing: h,
        vascular,
        domain: vec![true; n],
    })
}

/// Parses a voxel list: one `i j k fraction` record per line; blank lines
/// and lines starting with `#` are skipped.
pub fn parse_voxel_list(text: &str) -> Result<Vec<VascularVoxel>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::InvalidSpec(format!("voxel list line {}: expected `i j k fraction`", lineno + 1));
        let mut parts = line.split_whitespace();
        let mut next_index = || -> Result<usize> {
            parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())
        };
        let index = [next_index()?, next_index()?, next_index()?];
        let fraction: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if parts.next().is_some() {
            return Err(bad());
        }
        out.push(VascularVoxel { index, fraction });
    }
    Ok(out)
}

/// Inverse of [`parse_voxel_list`]; floats are written in shortest
/// round-trip form.
pub fn format_voxel_list(voxels: &[VascularVoxel]) -> String {
    let mut s = String::new();
    for v in voxels {
        let [i, j, k] = v.index;
        let _ = writeln!(s, "{i} {j} {k} {:?}", v.fraction);
    }
    s
}

pub(crate) fn coarse_factor(dims: [usize; 3]) -> Result<[usize; 3]> {
    let mut f = [0; 3];
    for a in 0..3 {
        if dims[a] == 0 || dims[a] % COARSE_CELLS != 0 {
            return Err(Error::InvalidSpec(format!(
                "grid dimension {} is not a multiple of {COARSE_CELLS}",
                dims[a]
            )));
        }
        f[a] = dims[a] / COARSE_CELLS;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_column_fraction() {
        // A column of voxels through a 16³ grid occupies 1/256 of it.
        let spec = PhantomSpec {
            dims: [16; 3],
            spacing: 1.0,
            mask: MaskFamily::Cylinders(vec![Cylinder {
                axis: Axis::Z,
                center: [7.5, 7.5],
                radius: 0.4,
                span: None,
            }]),
            partial_volume: false,
            seed: 0,
        };
        let g = build_phantom(&spec).unwrap();
        assert_eq!(g.vascular_mask().iter().filter(|&&m| m).count(), 16);
        assert_relative_eq!(g.vascular_fraction(), 1.0 / 256.0, max_relative = 1e-15);
    }

    #[test]
    fn empty_random_mask_is_rejected() {
        let spec = PhantomSpec {
            mask: MaskFamily::Random { density: 0.0 },
            ..PhantomSpec::desk(16)
        };
        assert!(matches!(build_phantom(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn random_mask_is_seeded() {
        let spec = PhantomSpec {
            mask: MaskFamily::Random { density: 0.01 },
            seed: 9,
            ..PhantomSpec::desk(16)
        };
        assert_eq!(build_phantom(&spec).unwrap(), build_phantom(&spec).unwrap());
    }

    #[test]
    fn voxel_list_round_trip() {
        let voxels = vec![
            VascularVoxel { index: [1, 2, 3], fraction: 0.1 },
            VascularVoxel { index: [0, 0, 15], fraction: 1.0 / 3.0 },
            VascularVoxel { index: [15, 4, 9], fraction: 1e-17 },
        ];
        let text = format_voxel_list(&voxels);
        let back = parse_voxel_list(&text).unwrap();
        assert_eq!(back, voxels);
        for (a, b) in back.iter().zip(&voxels) {
            assert_eq!(a.fraction.to_bits(), b.fraction.to_bits());
        }
    }

    #[test]
    fn disc_rectangle_areas() {
        let pi = core::f64::consts::PI;
        assert_relative_eq!(disc_rect_area(1.0, -2.0, 2.0, -2.0, 2.0), pi, max_relative = 1e-14);
        assert_relative_eq!(disc_rect_area(1.0, 0.0, 2.0, 0.0, 2.0), pi / 4.0, max_relative = 1e-14);
        assert_relative_eq!(disc_rect_area(1.0, -2.0, 2.0, -2.0, 0.0), pi / 2.0, max_relative = 1e-14);
        assert_relative_eq!(disc_rect_area(1.0, -0.5, 0.5, -0.5, 0.5), 1.0, max_relative = 1e-14);
        assert_eq!(disc_rect_area(1.0, 1.0, 2.0, 1.0, 2.0), 0.0);
        // Segment beyond the chord at u = 0.5.
        let seg = libm::acos(0.5) - 0.5 * libm::sqrt(0.75);
        assert_relative_eq!(disc_rect_area(1.0, 0.5, 3.0, -3.0, 3.0), seg, max_relative = 1e-13);
        assert_relative_eq!(disc_rect_area(1.0, -3.0, 3.0, -3.0, -0.5), seg, max_relative = 1e-13);
    }

    #[test]
    fn partial_volume_matches_disc_area() {
        let spec = PhantomSpec {
            dims: [16; 3],
            spacing: 2.0,
            mask: MaskFamily::Cylinders(vec![Cylinder {
                axis: Axis::Y,
                center: [16.0, 16.0],
                radius: 3.0,
                span: None,
            }]),
            partial_volume: true,
            seed: 0,
        };
        let g = build_phantom(&spec).unwrap();
        let blood: f64 = g.vascular.iter().sum::<f64>() * 8.0;
        let exact = core::f64::consts::PI * 9.0 * 32.0;
        assert_relative_eq!(blood, exact, max_relative = 1e-12);
    }
}
