use rand::Rng;
use segprobe_core::svcca::*;
use segprobe_core::synth;

mod common;
use common::oracle_r2;

#[test]
fn matches_pca_plus_ols() {
    let cfg = CcaConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut r = synth::rng(seed);
        let d = r.random_range(5..=20);
        let x = synth::gaussian_matrix(&mut r, 200, d) * synth::gaussian_matrix(&mut r, d, d);
        let w = synth::gaussian_matrix(&mut r, d, 1);
        let y: Vec<f64> = (0..200)
            .map(|i| (x.row(i) * &w)[0] + 2.0 * synth::normal(&mut r))
            .collect();
        let rho = svcca_corr(&x, &y, &cfg).unwrap();
        worst = worst.max((rho * rho - oracle_r2(&x, &y, cfg.variance_kept)).abs());
    }
    assert!(worst <= 1e-8, "{worst}");
}

#[test]
fn invariant_to_affine_maps_of_y_and_scale_of_x() {
    let cfg = CcaConfig::default();
    let mut r = synth::rng(4);
    let x = synth::gaussian_matrix(&mut r, 120, 6);
    let y: Vec<f64> = (0..120)
        .map(|i| x[(i, 0)] - x[(i, 2)] + synth::normal(&mut r))
        .collect();
    let a = svcca_corr(&x, &y, &cfg).unwrap();
    let y2: Vec<f64> = y.iter().map(|v| 3.0 - 0.5 * v).collect();
    assert!((a - svcca_corr(&x, &y2, &cfg).unwrap()).abs() < 1e-8);
    assert!((a - svcca_corr(&(x.clone() * 7.0), &y, &cfg).unwrap()).abs() < 1e-8);
    assert!((a - svcca_corr(&x.map(|v| v + 4.0), &y, &cfg).unwrap()).abs() < 1e-8);
    assert!((0.0..=1.0).contains(&a));
}

#[test]
fn designated_features_gain_weight() {
    let cfg = CcaConfig::default();
    for seed in 0..5 {
        let s = synth::weight_setup(seed, 300, 8, 3);
        let input = CcaInput {
            segment: "t",
            representation: "syn",
            probe: "logreg",
            tokens: &s.tokens,
            full: &s.full,
            selected: &s.selected,
            profiles: &s.profiles,
            features: &s.features,
        };
        let (_, weights) = analyze(&input, BaselineMode::Pooled, &cfg).unwrap();
        assert!(!weights.is_empty());
        for w in &weights {
            let designated = s.designated.contains(&w.feature);
            assert!(designated == (w.ratio > 1.0), "seed {seed}: {w:?}");
        }
    }
}
