mod common;

use hpmri_oed::phantom::{CgOptions, MaskFamily, COARSE_CELLS};
use hpmri_oed::{
    apply_excitation, build_phantom, convergence_errors, hf_step, run_hf, select_cells,
    AcquisitionDesign, HfOptions, HfParams, ModelParams, PhantomSpec, PhantomState,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(n: usize, mask: MaskFamily) -> PhantomSpec {
    PhantomSpec {
        dims: [n; 3],
        spacing: 1.0,
        mask,
        partial_volume: true,
        seed: 0,
    }
}

/// Diffusion only: no relaxation, exchange or inflow.
fn inert() -> HfParams {
    HfParams {
        model: ModelParams {
            t1p: 1e300,
            t1l: 1e300,
            kpl: 0.0,
            klp: 0.0,
            sigma_p: 0.0,
            ..ModelParams::default()
        },
        lp: 0.0,
        ll: 0.0,
        ..HfParams::default()
    }
}

#[test]
fn diffusion_conserves_mass() {
    let grid = build_phantom(&PhantomSpec::desk(16)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut state = PhantomState::zeros(&grid);
    for v in state.phi_p.iter_mut().chain(state.phi_l.iter_mut()) {
        *v = rng.random::<f64>();
    }
    let params = inert();
    let cg = CgOptions::default();
    for _ in 0..10 {
        let next = hf_step(&grid, &state, &params, 0.15, |_| 0.0, &cg).unwrap();
        let (p0, p1) = (state.total_pyruvate(), next.total_pyruvate());
        let (l0, l1) = (state.total_lactate(), next.total_lactate());
        assert!((p1 - p0).abs() <= 1e-8 * p0, "{p0} {p1}");
        assert!((l1 - l0).abs() <= 1e-8 * l0, "{l0} {l1}");
        state = next;
    }
}

#[test]
fn uniform_step_has_closed_form() {
    let grid = build_phantom(&spec(16, MaskFamily::Uniform)).unwrap();
    let params = HfParams {
        model: ModelParams {
            klp: 0.02,
            ..ModelParams::default()
        },
        ..HfParams::default()
    };
    let m = params.model;
    let (p0, l0, dt, v) = (0.7, 0.3, 0.5, 2.0);
    let state = PhantomState::uniform(&grid, p0, l0);
    let next = hf_step(&grid, &state, &params, dt, |_| v, &CgOptions::default()).unwrap();
    let p1 = (p0 + dt * (m.klp * l0 + params.lp * v)) / (1.0 + dt * (1.0 / m.t1p + m.kpl));
    let l1 = (l0 + dt * m.kpl * p1) / (1.0 + dt * (1.0 / m.t1l + m.klp));
    for i in 0..grid.len() {
        // Exact up to the linear solver's residual target.
        assert!((next.phi_p[i] - p1).abs() < 1e-9 * p1, "{} {p1}", next.phi_p[i]);
        assert!((next.phi_l[i] - l1).abs() < 1e-9 * l1);
    }
    assert_eq!(next.time, dt);
}

/// Exact uniform-phantom fields by integrating the two-pool exchange with
/// pulses, using the independent integrator.
fn uniform_oracle(params: &HfParams, design: &AcquisitionDesign) -> Vec<(f64, f64)> {
    let m = params.model;
    let times = design.scan_times();
    let mut y = [0.0, 0.0];
    let mut out = Vec::new();
    let rhs = |t: f64, y: [f64; 2]| {
        [
            -(1.0 / m.t1p + m.kpl) * y[0] + m.klp * y[1] + params.lp * common::input(&m, t),
            m.kpl * y[0] - (1.0 / m.t1l + m.klp) * y[1],
        ]
    };
    for k in 0..times.len() {
        out.push((y[0], y[1]));
        if k + 1 == times.len() {
            break;
        }
        y = [design.theta_p()[k].cos() * y[0], design.theta_l()[k].cos() * y[1]];
        let (a, b) = (times[k], times[k + 1]);
        if a < m.t0 && m.t0 < b {
            y = common::cash_karp(rhs, a, m.t0, y, 1e-13);
            y = common::cash_karp(rhs, m.t0, b, y, 1e-13);
        } else {
            y = common::cash_karp(rhs, a, b, y, 1e-13);
        }
    }
    out
}

#[test]
fn uniform_phantom_converges_to_pool_model() {
    let grid = build_phantom(&spec(16, MaskFamily::Uniform)).unwrap();
    let params = HfParams::default();
    let design = AcquisitionDesign::constant(6, 3.0, 20.0, 30.0).unwrap();
    let exact = uniform_oracle(&params, &design);
    let run = |dt: f64| {
        let opts = HfOptions {
            dt,
            include_vascular_signal: false,
            ..HfOptions::default()
        };
        run_hf(&grid, &params, &design, &opts).unwrap()
    };
    let coarse = run(0.01);
    let fine = run(0.005);
    let vol = coarse.cell_volume;
    for k in 1..design.scans() {
        // Backward Euler is first order; one Richardson step removes the
        // leading error term.
        let p = 2.0 * fine.q_p[k][0] / vol - coarse.q_p[k][0] / vol;
        let l = 2.0 * fine.q_l[k][0] / vol - coarse.q_l[k][0] / vol;
        let (ep, el) = exact[k];
        assert!((p - ep).abs() <= 1e-4 * ep.abs(), "{k}: {p} {ep}");
        assert!((l - el).abs() <= 1e-4 * el.abs().max(1e-3 * ep.abs()), "{k}: {l} {el}");
        // Without the Richardson step the error still falls with dt.
        let e_coarse = (coarse.q_p[k][0] / vol - ep).abs();
        let e_fine = (fine.q_p[k][0] / vol - ep).abs();
        assert!(e_fine <= e_coarse, "{k}: {e_fine} {e_coarse} {ep}");
    }
}

#[test]
fn no_input_gives_zero_cells() {
    let grid = build_phantom(&PhantomSpec::desk(16)).unwrap();
    let params = HfParams {
        model: ModelParams {
            sigma_p: 0.0,
            ..ModelParams::default()
        },
        ..HfParams::default()
    };
    let cells = run_hf(&grid, &params, &AcquisitionDesign::default(), &HfOptions { dt: 0.6, ..HfOptions::default() }).unwrap();
    assert!(cells.signals.iter().all(|s| s.s_p.iter().chain(&s.s_l).all(|&v| v == 0.0)));
    assert!(cells.peak_vascular.iter().all(|&v| v == 0.0));
    assert!(select_cells(&cells).is_err());
}

#[test]
fn excitation_scales_by_cosine() {
    let grid = build_phantom(&spec(16, MaskFamily::Uniform)).unwrap();
    let mut s = PhantomState::uniform(&grid, 2.0, 3.0);
    apply_excitation(&mut s, 0.0, std::f64::consts::FRAC_PI_2);
    assert!(s.phi_p.iter().all(|&v| v == 2.0));
    assert!(s.phi_l.iter().all(|&v| v.abs() < 1e-15));
    apply_excitation(&mut s, std::f64::consts::FRAC_PI_3, 0.0);
    assert!(s.phi_p.iter().all(|&v| (v - 1.0).abs() < 1e-15));
}

#[test]
fn point_source_spreads_symmetrically() {
    // Odd edge so the source sits at the true centre.
    let grid = build_phantom(&spec(17, MaskFamily::Uniform)).unwrap();
    let mut state = PhantomState::zeros(&grid);
    let centre = grid.index(8, 8, 8);
    state.phi_p[centre] = 1.0;
    let next = hf_step(&grid, &state, &inert(), 0.1, |_| 0.0, &CgOptions::default()).unwrap();
    let v = |i, j, k| next.phi_p[grid.index(i, j, k)];
    let n = v(9, 8, 8);
    for w in [v(7, 8, 8), v(8, 9, 8), v(8, 7, 8), v(8, 8, 9), v(8, 8, 7)] {
        assert!((w - n).abs() < 1e-9 * n, "{w} {n}");
    }
    assert!(next.phi_p.iter().all(|&x| x >= 0.0));
    assert!(next.phi_p[centre] < 1.0 && n > 0.0);
}

#[test]
fn desk_phantom_fills_every_band_and_stays_nonnegative() {
    let grid = build_phantom(&PhantomSpec::default()).unwrap();
    let cells = run_hf(&grid, &HfParams::default(), &AcquisitionDesign::default(), &HfOptions::default()).unwrap();
    assert!(cells.min_relative_field >= -1e-8);
    assert_eq!(cells.cells(), COARSE_CELLS.pow(3));
    let selected = select_cells(&cells).unwrap();
    let counts: Vec<usize> = (1..=4).map(|b| selected.iter().filter(|s| s.band == b).count()).collect();
    assert_eq!(counts, [7, 12, 4, 2]);
    for w in selected.windows(2) {
        if w[0].band == w[1].band {
            assert!(w[0].peak >= w[1].peak);
        }
    }
    let same = convergence_errors(&cells, &cells).unwrap();
    assert!(same.iter().all(|&(_, a, b)| a == 0.0 && b == 0.0));
}

#[test]
fn runs_are_reproducible() {
    let grid = build_phantom(&PhantomSpec::desk(16)).unwrap();
    let opts = HfOptions { dt: 0.3, ..HfOptions::default() };
    let a = run_hf(&grid, &HfParams::default(), &AcquisitionDesign::default(), &opts).unwrap();
    let b = run_hf(&grid, &HfParams::default(), &AcquisitionDesign::default(), &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn step_must_divide_repetition_time() {
    let grid = build_phantom(&PhantomSpec::desk(16)).unwrap();
    let opts = HfOptions { dt: 0.7, ..HfOptions::default() };
    assert!(run_hf(&grid, &HfParams::default(), &AcquisitionDesign::default(), &opts).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_masks_keep_fields_nonnegative(seed in any::<u64>(), density in 0.005..0.2f64,
                                            dp in 0.0..40.0f64, dt in 0.05..1.0f64) {
        let grid = build_phantom(&PhantomSpec {
            dims: [16; 3],
            spacing: 2.0,
            mask: MaskFamily::Random { density },
            partial_volume: false,
            seed,
        });
        prop_assume!(grid.is_ok());
        let grid = grid.unwrap();
        let params = HfParams { dp, dl: dp, ..HfParams::default() };
        let mut state = PhantomState::zeros(&grid);
        for k in 1..=5 {
            state = hf_step(&grid, &state, &params, dt, |t| 10.0 * (-0.1 * t).exp(), &CgOptions::default()).unwrap();
            prop_assert!(state.phi_p.iter().chain(&state.phi_l).all(|&v| v >= -1e-12), "step {}", k);
        }
    }

    #[test]
    fn diffusion_conserves_random_fields(seed in any::<u64>(), dp in 0.1..40.0f64, dt in 0.01..2.0f64) {
        let grid = build_phantom(&PhantomSpec::desk(16)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = PhantomState::zeros(&grid);
        state.phi_p.iter_mut().for_each(|v| *v = rng.random::<f64>());
        let params = HfParams { dp, ..inert() };
        let next = hf_step(&grid, &state, &params, dt, |_| 0.0, &CgOptions::default()).unwrap();
        let (a, b) = (state.total_pyruvate(), next.total_pyruvate());
        prop_assert!((a - b).abs() <= 1e-8 * a);
    }
}
