mod common;

use causalreg::confounding::estimate_confounding_strength;
use causalreg::data::CovariancePair;
use causalreg::regression::{lasso_from_cov, ridge_from_cov, solution_norm_curve, Penalty, SolverConfig};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

use common::{brute_force_lasso, lasso_kkt_violation, lasso_value, random_problem, ridge_from_samples};

fn log_lambda() -> impl Strategy<Value = f64> {
    (-3.0f64..1.5).prop_map(|e| 10f64.powf(e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ridge_zeroes_the_gradient(seed in any::<u64>(), d in 1usize..=10, n in 2usize..40, lambda in log_lambda()) {
        let (_, cov) = random_problem(seed, n, d);
        let a = ridge_from_cov(&cov, lambda, &SolverConfig::default()).unwrap().coefficients;
        let grad = 2.0 * ((&cov.sxx + DMatrix::identity(d, d) * lambda) * &a - &cov.sxy);
        prop_assert!(grad.amax() <= 1e-8, "gradient {}", grad.amax());
    }

    #[test]
    fn lasso_satisfies_subgradient_conditions(seed in any::<u64>(), d in 1usize..=10, n in 2usize..40, lambda in log_lambda()) {
        let (_, cov) = random_problem(seed, n, d);
        let a = lasso_from_cov(&cov, lambda, &SolverConfig::default()).unwrap().coefficients;
        prop_assert!(lasso_kkt_violation(&cov, &a, lambda) <= 1e-6);
    }

    #[test]
    fn ridge_squared_norm_is_non_increasing(seed in any::<u64>(), d in 1usize..=8, n in 2usize..30) {
        let (_, cov) = random_problem(seed, n, d);
        let grid: Vec<f64> = (0..25).map(|k| 1e-3 * 1.5f64.powi(k)).collect();
        let curve = solution_norm_curve(&cov, Penalty::Ridge, &grid, &SolverConfig::default()).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 * (1.0 + 1e-9) + 1e-12, "{:?}", w);
        }
    }

    #[test]
    fn lasso_l1_norm_is_non_increasing(seed in any::<u64>(), d in 1usize..=8, n in 2usize..30) {
        let (_, cov) = random_problem(seed, n, d);
        let cfg = SolverConfig::default();
        let mut previous = f64::INFINITY;
        for k in 0..25 {
            let lambda = 1e-3 * 1.5f64.powi(k);
            let l1 = lasso_from_cov(&cov, lambda, &cfg).unwrap().coefficients.lp_norm(1);
            prop_assert!(l1 <= previous * (1.0 + 1e-7) + 1e-10, "λ={lambda}: {l1} after {previous}");
            previous = l1;
        }
    }

    #[test]
    fn lasso_matches_brute_force_in_three_dimensions(seed in any::<u64>(), n in 4usize..30, lambda in log_lambda()) {
        let (_, cov) = random_problem(seed, n, 3);
        let a = lasso_from_cov(&cov, lambda, &SolverConfig::default()).unwrap().coefficients;
        let oracle = brute_force_lasso(&cov, lambda);
        let (got, want) = (lasso_value(&cov, &a, lambda), lasso_value(&cov, &oracle, lambda));
        prop_assert!((got - want).abs() <= 1e-3, "{got} vs {want}");
    }

    #[test]
    fn ridge_covariance_form_equals_sample_form(seed in any::<u64>(), d in 1usize..=8, n in 2usize..40, lambda in log_lambda()) {
        let (data, cov) = random_problem(seed, n, d);
        let from_cov = ridge_from_cov(&cov, lambda, &SolverConfig::default()).unwrap().coefficients;
        let from_samples = ridge_from_samples(&data.x, &data.y, lambda);
        prop_assert!((&from_cov - &from_samples).amax() <= 1e-10 * (1.0 + from_samples.amax()));
    }

    #[test]
    fn confounding_fit_is_scale_equivariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let (_, cov) = random_problem(seed, 40, 6);
        let a_hat = causalreg::regression::ols_from_cov(&cov, &SolverConfig::default()).unwrap().coefficients;
        let base = estimate_confounding_strength(&cov.sxx, &a_hat, 1e-10).unwrap();
        let scaled = estimate_confounding_strength(&cov.sxx, &(&a_hat * scale), 1e-10).unwrap();
        let s2 = scale * scale;
        prop_assert!((scaled.beta_hat - base.beta_hat).abs() <= 1e-6);
        prop_assert!((scaled.sigma_a_sq - s2 * base.sigma_a_sq).abs() <= 1e-6 * s2 * (base.sigma_a_sq + base.sigma_c_sq));
        prop_assert!((scaled.sigma_c_sq - s2 * base.sigma_c_sq).abs() <= 1e-6 * s2 * (base.sigma_a_sq + base.sigma_c_sq));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lasso_matches_brute_force_in_five_dimensions(seed in any::<u64>(), n in 6usize..30, lambda in log_lambda()) {
        let (_, cov) = random_problem(seed, n, 5);
        let a = lasso_from_cov(&cov, lambda, &SolverConfig::default()).unwrap().coefficients;
        let oracle = brute_force_lasso(&cov, lambda);
        let (got, want) = (lasso_value(&cov, &a, lambda), lasso_value(&cov, &oracle, lambda));
        prop_assert!((got - want).abs() <= 1e-3, "{got} vs {want}");
    }
}

proptest! {
    #[test]
    fn sample_covariances_are_psd(seed in any::<u64>(), d in 1usize..=10, n in 2usize..30) {
        let (data, cov) = random_problem(seed, n, d);
        let eig = SymmetricEigen::new(cov.sxx.clone()).eigenvalues;
        prop_assert!(eig.min() >= -1e-10 * eig.max().max(0.0));
        let means = data.x.row_mean();
        prop_assert!(means.amax() <= 1e-12);
    }

    #[test]
    fn covariance_pair_rejects_indefinite_input(v in 0.1f64..10.0) {
        let sxx = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -v]);
        prop_assert!(CovariancePair::new(sxx, DVector::zeros(2), None).is_err());
    }
}

/// The squared Euclidean norm of the lasso path need not be monotone: here
/// both solutions are exact optima of a strictly convex objective, the ℓ1
/// norm shrinks and the squared norm grows.
#[test]
fn lasso_squared_norm_can_grow_with_lambda() {
    let (_, cov) = random_problem(727470803046880774, 5, 4);
    let cfg = SolverConfig::default();
    let small = lasso_from_cov(&cov, 0.011390625, &cfg).unwrap().coefficients;
    let large = lasso_from_cov(&cov, 0.0170859375, &cfg).unwrap().coefficients;
    assert!(SymmetricEigen::new(cov.sxx.clone()).eigenvalues.min() > 1e-4);
    assert!(lasso_kkt_violation(&cov, &small, 0.011390625) < 1e-12);
    assert!(lasso_kkt_violation(&cov, &large, 0.0170859375) < 1e-12);
    assert!(large.lp_norm(1) < small.lp_norm(1));
    assert!(large.norm_squared() > small.norm_squared() + 0.04);
}
