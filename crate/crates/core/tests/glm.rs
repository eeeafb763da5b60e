mod common;

use causal_mediation::estimators::fit_spec;
use causal_mediation::glm::{fit_logistic, DesignMatrix, FitOptions, ModelSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn problem(n: usize, p: usize, seed: u64) -> (DesignMatrix, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let beta: Vec<f64> = (0..p).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let y = (0..n)
        .map(|i| {
            let lp: f64 = -0.3 + (0..p).map(|j| beta[j] * cols[j][i]).sum::<f64>();
            f64::from(u8::from(rng.gen_bool(1.0 / (1.0 + (-lp).exp()))))
        })
        .collect();
    let w = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
    let named = cols.into_iter().enumerate().map(|(j, c)| (format!("x{j}"), c)).collect();
    (DesignMatrix::from_columns(named, n).unwrap(), y, w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn converged_fit_has_small_score(n in 80usize..300, p in 1usize..5, seed in any::<u64>()) {
        let (x, y, w) = problem(n, p, seed);
        let opts = FitOptions::default();
        let fit = fit_logistic(&x, &y, &w, &opts).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(fit.max_abs_score < opts.tol);
    }

    #[test]
    fn row_permutation_leaves_beta(n in 80usize..300, p in 1usize..5, seed in any::<u64>()) {
        let (x, y, w) = problem(n, p, seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let xp = x.select_rows(&order);
        let yp: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let wp: Vec<f64> = order.iter().map(|&i| w[i]).collect();
        let a = fit_logistic(&x, &y, &w, &FitOptions::default()).unwrap();
        let b = fit_logistic(&xp, &yp, &wp, &FitOptions::default()).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn centering_only_reparameterizes(seed in any::<u64>()) {
        let (ds, _) = common::mediation_data(400, seed, 0.5, 0.5);
        let spec = |centered| {
            ModelSpec::new("Y", Some("Q")).main("C1").main("C2").main("M").interaction("C1").interaction("C2").centered(centered)
        };
        let (a, _) = fit_spec(&ds, &spec(false), &FitOptions::default()).unwrap();
        let (b, _) = fit_spec(&ds, &spec(true), &FitOptions::default()).unwrap();
        for (u, v) in a.fitted.iter().zip(&b.fitted) {
            prop_assert!((u - v).abs() < 1e-8);
        }
    }
}

#[test]
fn sandwich_matches_model_variance_when_correct() {
    let (x, y, _) = problem(100_000, 3, 42);
    let w = vec![1.0; y.len()];
    let fit = fit_logistic(&x, &y, &w, &FitOptions::default()).unwrap();
    for j in 0..x.ncols() {
        let ratio = fit.cov_sandwich[(j, j)] / fit.cov_model[(j, j)];
        assert!((ratio - 1.0).abs() < 0.02, "column {j}: ratio {ratio}");
    }
}
