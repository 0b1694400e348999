//! Randomized structural invariants of the library, mostly via proptest.

use num_complex::Complex64;
use proptest::prelude::*;

use ssm::deviation::{superlevel_measure, theorem_bound};
use ssm::fourier::{fourier_chaos_game, fourier_mu_n, fourier_product};
use ssm::ifs::{
    build_system, cantor_standard, compose_word, iterate_system, normalize_coordinates, AffineMap,
    IfsSystem, Word,
};

/// A strategy for small well-separated systems with m maps.
fn arb_system(m: usize) -> impl Strategy<Value = IfsSystem> {
    let map = (0.1f64..0.45, 0.0f64..1.0);
    let probs = prop::collection::vec(0.05f64..1.0, m);
    (prop::collection::vec(map, m), probs).prop_filter_map(
        "valid system with distinct fixed points",
        |(maps, weights)| {
            let total: f64 = weights.iter().sum();
            let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
            // Spread the offsets so fixed points are distinct.
            let mut spread = maps.clone();
            for (k, m) in spread.iter_mut().enumerate() {
                m.1 += k as f64;
            }
            build_system(&spread, &probs).ok()
        },
    )
}

fn arb_word(m: usize, max_len: usize) -> impl Strategy<Value = Word> {
    prop::collection::vec(0..m, 0..=max_len).prop_map(Word)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn word_composition_is_a_fold_of_map_composition(
        sys in arb_system(3),
        word in arb_word(3, 6),
        x in -2.0f64..2.0,
    ) {
        let composed = compose_word(&sys, &word);
        // Low positions apply first.
        let mut direct = x;
        for &letter in word.0.iter().rev() {
            direct = sys.maps()[letter].apply(direct);
        }
        prop_assert!((composed.apply(x) - direct).abs() < 1e-9);
        let a_prod: f64 = word.0.iter().map(|&l| sys.maps()[l].a).product();
        prop_assert!((composed.a - a_prod).abs() <= 1e-15 * a_prod.abs().max(1.0));
    }

    #[test]
    fn iterated_system_enumerates_all_pairs(sys in arb_system(2)) {
        let it = iterate_system(&sys, 2).unwrap();
        prop_assert_eq!(it.len(), 4);
        let mut expected: Vec<(f64, f64, f64)> = Vec::new();
        for i in 0..2usize {
            for j in 0..2usize {
                let map = compose_word(&sys, &Word(vec![i, j]));
                expected.push((map.a, map.b, sys.probs()[i] * sys.probs()[j]));
            }
        }
        let mut got: Vec<(f64, f64, f64)> = it
            .maps()
            .iter()
            .zip(it.probs())
            .map(|(m, &p)| (m.a, m.b, p))
            .collect();
        let key = |t: &(f64, f64, f64)| (t.0, t.1, t.2);
        expected.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        got.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        for (e, g) in expected.iter().zip(&got) {
            prop_assert!((e.0 - g.0).abs() < 1e-12);
            prop_assert!((e.1 - g.1).abs() < 1e-12);
            prop_assert!((e.2 - g.2).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_rescales_the_transform_modulus(
        sys in arb_system(3),
        xi in -40.0f64..40.0,
    ) {
        let (norm, phi) = normalize_coordinates(&sys).unwrap();
        // x' = phi(x) pushes mu forward, so |F mu'(xi)| = |F mu(l * xi)| for
        // the limit measure. The depth-n approximants anchor their atoms at
        // base point 0, which conjugation moves to phi(0) = t; each atom
        // shifts by a_w * t, so the moduli agree up to |xi| * max|a|^n * |t|.
        let n = 5;
        let lhs = fourier_mu_n(&norm, n, xi).unwrap().norm();
        let rhs = fourier_mu_n(&sys, n, phi.a * xi).unwrap().norm();
        let base_point_drift = xi.abs() * norm.max_scale().powi(n as i32) * phi.b.abs();
        prop_assert!(
            (lhs - rhs).abs() <= base_point_drift + 1e-10,
            "{lhs} vs {rhs} (allowed drift {base_point_drift:.3e})"
        );
    }

    #[test]
    fn one_step_recursion_consistency(
        sys in arb_system(2),
        xi in -100.0f64..100.0,
        n in 1u32..6,
    ) {
        let deep = fourier_mu_n(&sys, n, xi).unwrap();
        let mut assembled = Complex64::new(0.0, 0.0);
        for (map, &p) in sys.maps().iter().zip(sys.probs()) {
            let inner = fourier_mu_n(&sys, n - 1, map.a * xi).unwrap();
            assembled += p * Complex64::new(0.0, -map.b * xi).exp() * inner;
        }
        prop_assert!((deep - assembled).norm() < 1e-11);
    }

    #[test]
    fn superlevel_measure_is_monotone_in_c(
        c_lo in 0.05f64..0.5,
        bump in 0.05f64..0.5,
    ) {
        let sys = cantor_standard();
        let t = 100f64.ln();
        let lo = superlevel_measure(&sys, t, c_lo, 0.05, 8).unwrap();
        let hi = superlevel_measure(&sys, t, c_lo + bump, 0.05, 8).unwrap();
        // A lower threshold (larger c) can only enlarge the set.
        prop_assert!(hi.measure >= lo.measure);
    }

    #[test]
    fn bound_is_monotone_in_each_argument(
        s in 0.0f64..2.0,
        ds in 0.01f64..1.0,
        eta in 0.1f64..3.0,
        kap in 2u64..100,
        r in 2u64..50,
    ) {
        let base = theorem_bound(s, eta, kap, r).unwrap().bound;
        prop_assert!(theorem_bound(s + ds, eta, kap, r).unwrap().bound >= base);
        prop_assert!(theorem_bound(s, eta, kap + 1, r).unwrap().bound >= base);
        if r > 2 {
            // A wider contraction gap only improves (shrinks) the bound.
            prop_assert!(theorem_bound(s, eta, kap, r - 1).unwrap().bound >= base);
        }
    }

    #[test]
    fn transform_modulus_never_exceeds_one(
        sys in arb_system(3),
        xi in -500.0f64..500.0,
        n in 0u32..8,
    ) {
        let v = fourier_mu_n(&sys, n, xi).unwrap();
        prop_assert!(v.norm() <= 1.0 + 1e-12);
        let conj = fourier_mu_n(&sys, n, -xi).unwrap();
        prop_assert!((conj - v.conj()).norm() < 1e-12);
    }
}

#[test]
fn chaos_game_error_shrinks_like_inverse_sqrt_samples() {
    let sys = cantor_standard();
    let xi = 7.3;
    let truth = fourier_product(&sys, xi, 60).unwrap();
    let mut log_n = Vec::new();
    let mut log_err = Vec::new();
    for k in 0..4 {
        let samples = 4_000u64 * 4u64.pow(k);
        // Average the error over seeds to tame the noise in the fit.
        let mut err = 0.0;
        for seed in 0..8 {
            err += (fourier_chaos_game(&sys, xi, samples, seed).value - truth).norm();
        }
        log_n.push((samples as f64).ln());
        log_err.push((err / 8.0).ln());
    }
    let slope = ssm::deviation::least_squares_slope(&log_n, &log_err);
    assert!(
        (-0.65..=-0.35).contains(&slope),
        "Monte Carlo error exponent {slope} outside [-0.65, -0.35]; errors {log_err:?}"
    );
}

#[test]
fn affine_map_composition_matches_pointwise_application() {
    let f = AffineMap { a: 0.5, b: 0.25 };
    let g = AffineMap { a: -0.3, b: 1.0 };
    let fg = g.and_then(&f); // f after g
    for x in [-1.0, 0.0, 0.7, 3.0] {
        assert!((fg.apply(x) - f.apply(g.apply(x))).abs() < 1e-15);
    }
}
