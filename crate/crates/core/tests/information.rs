mod common;

use hpmri_oed::{
    gauss_hermite_3d, AcquisitionDesign, InformationModel, ModelParams, NoiseModel, PriorSpec,
    REFERENCE_PEAK_PYRUVATE,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(snr: f64, order: usize) -> InformationModel {
    model_with_prior(snr, order, PriorSpec::default())
}

fn model_with_prior(snr: f64, order: usize, prior: PriorSpec) -> InformationModel {
    let d = AcquisitionDesign::default();
    let noise = NoiseModel::from_snr(snr, REFERENCE_PEAK_PYRUVATE, d.scans()).unwrap();
    InformationModel::for_design(&d, &ModelParams::default(), &prior, &noise, order).unwrap()
}

#[test]
fn five_point_rule_nodes() {
    // Largest physicists' Hermite root of order 5 is 2.0201828705.
    let prior = PriorSpec::new([10.0; 3], [1.0; 3]).unwrap();
    let g = gauss_hermite_3d(&prior, 5).unwrap();
    let mut axis: Vec<f64> = g.nodes.iter().map(|n| n[0] - 10.0).collect();
    axis.sort_by(f64::total_cmp);
    axis.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    assert_eq!(axis.len(), 5);
    let top = axis[4] / std::f64::consts::SQRT_2;
    assert!((top - 2.020_182_870_5).abs() < 1e-9, "{top}");
    assert!((axis[4] - 2.856_970_013_9).abs() < 1e-9);
    assert!((axis[3] - 1.355_626_179_9).abs() < 1e-9);
    assert!(axis[2].abs() < 1e-12);
    let total: f64 = g.weights.iter().sum();
    assert!((total - 1.0).abs() < 1e-13);
}

#[test]
fn default_prior_nodes_are_positive() {
    let g = gauss_hermite_3d(&PriorSpec::default(), 5).unwrap();
    assert_eq!(g.len(), 125);
    assert!(g.nodes.iter().all(|n| n.iter().all(|&v| v > 0.0)));
}

#[test]
fn quadrature_agrees_with_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (i, snr) in [2.0, 20.0].into_iter().enumerate() {
        let m = model(snr, 5);
        let (tp, tl) = common::random_schedule(&mut rng, 30, 0.0, 90.0);
        let centers = m.node_totals(&tp, &tl);
        let (h_mc, se) =
            common::mc_mixture_entropy(&centers, &m.grid().weights, m.noise().sigma_z, 200_000, i as u64);
        let h = m.evidence_entropy(&tp, &tl);
        assert!((h - h_mc).abs() < 3.0 * se + 1e-12, "{h} vs {h_mc} ± {se}");
    }
}

#[test]
fn conditional_entropy_ignores_design() {
    let m = model(5.0, 5);
    let a = m.evaluate(&AcquisitionDesign::constant(30, 3.0, 10.0, 20.0).unwrap()).unwrap();
    let b = m.evaluate(&AcquisitionDesign::constant(30, 3.0, 80.0, 5.0).unwrap()).unwrap();
    assert_eq!(a.h_z_given_p, b.h_z_given_p);
    let sz = m.noise().sigma_z;
    let expected = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sz * sz).ln();
    assert!((a.h_z_given_p - expected).abs() < 1e-14);
}

#[test]
fn collapsed_prior_carries_no_information() {
    let prior = PriorSpec::new([0.15, 0.05, 4.0], [1e-9; 3]).unwrap();
    let m = model_with_prior(20.0, 5, prior);
    for (p, l) in [(3.0, 28.0), (35.0, 28.0), (90.0, 90.0)] {
        let mi = m.mi_constant(f64::to_radians(p), f64::to_radians(l));
        assert!(mi.abs() < 1e-6, "{mi}");
    }
}

#[test]
fn zero_angles_carry_no_information() {
    let m = model(20.0, 5);
    assert!(m.mi_constant(0.0, 0.0).abs() < 1e-12);
}

#[test]
fn gradient_matches_central_differences() {
    let m = model(2.0, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let (tp, tl) = common::random_schedule(&mut rng, 30, 2.0, 88.0);
        let mut gp = vec![0.0; 30];
        let mut gl = vec![0.0; 30];
        m.mi_gradient(&tp, &tl, &mut gp, &mut gl);
        let x: Vec<f64> = tp.iter().chain(&tl).copied().collect();
        let fd = common::central_gradient(|x| m.mi(&x[..30], &x[30..]), &x, 1e-4);
        let g: Vec<f64> = gp.iter().chain(&gl).copied().collect();
        let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let err = g.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(err <= 1e-4 * scale, "{err} vs {scale}");
    }
}

#[test]
fn low_snr_information_is_converged_in_order() {
    let d = AcquisitionDesign::default();
    for snr in [2.0, 5.0] {
        let a = model(snr, 5).mi(d.theta_p(), d.theta_l());
        let b = model(snr, 7).mi(d.theta_p(), d.theta_l());
        assert!((a - b).abs() < 1e-3, "snr {snr}: {a} {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn information_is_nonnegative(snr in 0.5..50.0f64, seed in any::<u64>()) {
        let m = model(snr, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (tp, tl) = common::random_schedule(&mut rng, 30, 0.0, 90.0);
        prop_assert!(m.mi(&tp, &tl) >= -1e-6);
    }

    #[test]
    fn more_noise_means_less_information(snr in 0.5..20.0f64, ap in 1.0..89.0f64, al in 1.0..89.0f64) {
        let lo = model(snr, 3).mi_constant(ap.to_radians(), al.to_radians());
        let hi = model(2.0 * snr, 3).mi_constant(ap.to_radians(), al.to_radians());
        prop_assert!(hi >= lo - 1e-10);
    }

    #[test]
    fn constant_and_repeated_schedules_agree(ap in 0.0..90.0f64, al in 0.0..90.0f64) {
        let m = model(5.0, 3);
        let (p, l) = (ap.to_radians(), al.to_radians());
        let a = m.mi_constant(p, l);
        let b = m.mi(&[p; 30], &[l; 30]);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}
