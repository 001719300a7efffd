use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thz_ocdm::fusion::{combine, combiner_variance, fused_variance, optimal_weights};

#[test]
fn monte_carlo_variance_matches_closed_form() {
    let var = [1.0, 2.0, 4.0, 8.0];
    let w = optimal_weights(&var).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dists: Vec<Normal<f64>> = var.iter().map(|v| Normal::new(0.0, v.sqrt()).unwrap()).collect();
    let draws = 100_000;
    let mut acc = 0.0;
    for _ in 0..draws {
        let est: Vec<f64> = dists.iter().map(|d| 5.0 + d.sample(&mut rng)).collect();
        let z = combine(&est, &w).unwrap() - 5.0;
        acc += z * z;
    }
    let mc = acc / draws as f64;
    let expect = fused_variance(&var).unwrap();
    assert!((expect - 8.0 / 15.0).abs() < 1e-12);
    assert!((mc / expect - 1.0).abs() < 0.05, "{mc}");
}

#[test]
fn optimal_weights_beat_random_simplex_points() {
    let var = [1.0, 2.0, 4.0, 8.0];
    let best = combiner_variance(&optimal_weights(&var).unwrap(), &var).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..4).map(|_| -rng.random_range(f64::EPSILON..1.0f64).ln()).collect();
        let s: f64 = raw.iter().sum();
        let b: Vec<f64> = raw.iter().map(|x| x / s).collect();
        assert!(combiner_variance(&b, &var).unwrap() >= best - 1e-12);
    }
}

fn variances() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-8f64..1e4, 1..10)
}

proptest! {
    #[test]
    fn weights_are_a_convex_combination(var in variances()) {
        let w = optimal_weights(&var).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|b| *b >= 0.0));
        // Smaller variance never gets less weight.
        for i in 0..var.len() {
            for j in 0..var.len() {
                if var[i] < var[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn weights_are_scale_invariant(var in variances(), c in 1e-6f64..1e6) {
        let a = optimal_weights(&var).unwrap();
        let scaled: Vec<f64> = var.iter().map(|v| v * c).collect();
        let b = optimal_weights(&scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_variance_bounds(var in variances()) {
        let f = fused_variance(&var).unwrap();
        let min = var.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(f <= min * (1.0 + 1e-12));
        let w = optimal_weights(&var).unwrap();
        let cv = combiner_variance(&w, &var).unwrap();
        prop_assert!((cv / f - 1.0).abs() < 1e-9);
    }

    #[test]
    fn perturbing_optimal_weights_never_helps(var in prop::collection::vec(1e-3f64..1e3, 2..8), i in 0usize..8, eps in -0.2f64..0.2) {
        let n = var.len();
        let i = i % n;
        let j = (i + 1) % n;
        let w = optimal_weights(&var).unwrap();
        let mut p = w.clone();
        p[i] += eps;
        p[j] -= eps;
        let best = combiner_variance(&w, &var).unwrap();
        prop_assert!(combiner_variance(&p, &var).unwrap() >= best * (1.0 - 1e-12));
    }

    #[test]
    fn combining_equal_estimates_returns_them(var in variances(), z in -1e3f64..1e3) {
        let w = optimal_weights(&var).unwrap();
        let est = vec![z; var.len()];
        prop_assert!((combine(&est, &w).unwrap() - z).abs() <= 1e-9 * z.abs().max(1.0));
    }
}
