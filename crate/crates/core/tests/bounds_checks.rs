mod common;

use causalreg::causal_bounds::{
    correlation_dimension, jl_tail_check, random_problem, theorem3_violation_check, ConfoundedRegressionProblem,
    FunctionClass, GaussHermite, ScalarConfoundedModel, DEFAULT_RANK_TOL, GAP_FACTOR,
};
use causalreg::rng::{normal_matrix, normal_vector, substream, uniform_in};
use nalgebra::DVector;
use proptest::prelude::*;

use common::quadrature_losses;

#[test]
fn nonlinear_gap_matches_quadrature() {
    let rule = GaussHermite::new(120);
    let mut rng = substream(11, 0);
    for k in 0..6 {
        let model = ScalarConfoundedModel {
            mixing: uniform_in(&mut rng, (0.5, 2.0)),
            x_noise: uniform_in(&mut rng, (0.2, 1.5)),
            a: uniform_in(&mut rng, (-1.0, 1.0)),
            c: uniform_in(&mut rng, (-1.0, 1.0)),
            sigma_e: uniform_in(&mut rng, (0.0, 1.0)),
        };
        let (p, q, r) = (uniform_in(&mut rng, (-2.0, 2.0)), uniform_in(&mut rng, (-0.5, 0.5)), uniform_in(&mut rng, (-1.0, 1.0)));
        let f = move |x: f64| p * x.tanh() + q * x * x + r * (2.0 * x).sin();
        let (obs, int) = quadrature_losses(model.mixing, model.x_noise, model.a, model.c, model.sigma_e, f);
        let gap = model.loss_gap(f, &rule);
        assert!((int - obs - gap).abs() <= 1e-3, "instance {k}: {} vs {gap}", int - obs);
    }
}

#[test]
fn nonlinear_gap_vanishes_for_the_regression_function() {
    let model = ScalarConfoundedModel { mixing: 1.3, x_noise: 0.4, a: 0.7, c: 0.9, sigma_e: 0.2 };
    let rule = GaussHermite::new(60);
    assert!(model.loss_gap(|x| 0.7 * x, &rule).abs() < 1e-14);
    let unconfounded = ScalarConfoundedModel { c: 0.0, ..model };
    assert_eq!(unconfounded.loss_gap(|x| x.sin(), &rule), 0.0);
}

/// With the class fixed, the typical supremum gap shrinks like `1/√ℓ`.
#[test]
fn gap_concentrates_with_more_sources() {
    let (d, variance, radius) = (2, 1.0, 1.0);
    let class = FunctionClass::LinearBall { radius };
    let mut means = Vec::new();
    for ell in [50, 100, 200, 400] {
        let p = random_problem(ell, d, variance, 0.0, ell as u64).unwrap();
        let report = theorem3_violation_check(&p, &class, 3.0, 4000, 1).unwrap();
        let mean = report.trials.iter().map(|t| t.sup_gap.abs()).sum::<f64>() / 4000.0;
        // E‖P c‖ ≈ √(V·d_corr/ℓ) for a d_corr-dimensional projection.
        let scale = GAP_FACTOR * radius * (variance * report.d_corr as f64 / ell as f64).sqrt();
        assert!(mean / scale > 0.5 && mean / scale < 2.0, "ell {ell}: {mean} vs {scale}");
        means.push(mean);
    }
    for w in means.windows(2) {
        let ratio = w[0] / w[1];
        assert!(ratio > 2f64.sqrt() / 2.0 && ratio < 2f64.sqrt() * 2.0, "ratio {ratio}");
    }
}

#[test]
fn jl_tail_is_below_bound() {
    let check = jl_tail_check(200, 5, 3.0, 100_000, 4).unwrap();
    assert!(check.within(3.0), "{check:?}");
    assert!(check.empirical_freq > 0.0);
}

#[test]
fn violation_rate_is_below_bound_for_a_ball() {
    let p = random_problem(500, 4, 1.0, 0.0, 5).unwrap();
    let report = theorem3_violation_check(&p, &FunctionClass::LinearBall { radius: 1.0 }, 3.0, 10_000, 6).unwrap();
    assert_eq!(report.d_corr, 4);
    assert!(report.within(3.0), "{} vs {}", report.violation_freq, report.prob_bound);
    assert!(report.slack.q05 <= report.slack.median && report.slack.median <= report.slack.q95);
}

#[test]
fn violation_rate_is_below_bound_for_a_finite_class() {
    let p = random_problem(300, 6, 2.0, 0.0, 7).unwrap();
    let mut rng = substream(8, 0);
    let members: Vec<DVector<f64>> = (0..3).map(|_| &p.a + normal_vector(&mut rng, 6, 0.5)).collect();
    let class = FunctionClass::FiniteLinearSet(members);
    let report = theorem3_violation_check(&p, &class, 2.5, 10_000, 9).unwrap();
    assert_eq!(report.d_corr, 3);
    assert!(report.within(3.0));
}

#[test]
fn reports_are_seed_deterministic() {
    let p = random_problem(40, 3, 1.0, 0.0, 1).unwrap();
    let class = FunctionClass::LinearBall { radius: 2.0 };
    let a = theorem3_violation_check(&p, &class, 2.0, 500, 3).unwrap();
    let b = theorem3_violation_check(&p, &class, 2.0, 500, 3).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn correlation_dimension_is_bounded(seed in any::<u64>(), ell in 1usize..12, d in 1usize..8, size in 1usize..10, rank in 1usize..8) {
        let mut rng = substream(seed, 0);
        let rank = rank.min(d).min(ell);
        let m = normal_matrix(&mut rng, ell, rank) * normal_matrix(&mut rng, rank, d);
        let p = ConfoundedRegressionProblem::new(m, DVector::zeros(d), DVector::zeros(ell), 0.0).unwrap();
        let members: Vec<DVector<f64>> = (0..size).map(|_| normal_vector(&mut rng, d, 1.0)).collect();
        let dim = FunctionClass::FiniteLinearSet(members).correlation_dimension(&p);
        prop_assert!(dim <= size.min(ell).min(d));
        prop_assert!(dim <= rank);
        let rows = normal_matrix(&mut rng, size, ell);
        prop_assert!(correlation_dimension(&rows, DEFAULT_RANK_TOL) <= size.min(ell));
    }
}
