//! Oracles shared by the integration tests. None of them call into the
//! solvers under test.
#![allow(dead_code)]

use causalreg::data::{center_and_scale, empirical_covariances, CovariancePair, Dataset};
use causalreg::rng::{normal_matrix, normal_vector, substream};
use nalgebra::{DMatrix, DVector};

/// Centered random regression problem with `n` samples and `d` predictors.
pub fn random_problem(seed: u64, n: usize, d: usize) -> (Dataset, CovariancePair) {
    let mut rng = substream(seed, 0);
    let x = normal_matrix(&mut rng, n, d);
    let a = normal_vector(&mut rng, d, 1.0);
    let y = &x * &a + normal_vector(&mut rng, n, 1.0);
    let data = center_and_scale(&Dataset::from_xy(x, y).unwrap(), false).unwrap();
    let cov = empirical_covariances(&data).unwrap();
    (data, cov)
}

/// `λ‖a‖₁ − 2aᵀsxy + aᵀsxx·a`, written out independently of the library.
pub fn lasso_value(cov: &CovariancePair, a: &DVector<f64>, lambda: f64) -> f64 {
    lambda * a.lp_norm(1) - 2.0 * a.dot(&cov.sxy) + a.dot(&(&cov.sxx * a))
}

/// Exact one-dimensional minimizer by grid scan plus shrinking refinement.
fn scan_coordinate(f: impl Fn(f64) -> f64, center: f64, half_width: f64) -> f64 {
    let (mut c, mut w) = (center, half_width);
    for _ in 0..60 {
        let mut best = (f(c), c);
        for k in 0..=40 {
            let t = c - w + 2.0 * w * k as f64 / 40.0;
            let v = f(t);
            if v < best.0 {
                best = (v, t);
            }
        }
        c = best.1;
        w *= 0.25;
    }
    c
}

/// Brute-force lasso minimizer: cyclic coordinate grid refinement, started
/// from zero, until a full sweep stops improving.
pub fn brute_force_lasso(cov: &CovariancePair, lambda: f64) -> DVector<f64> {
    let d = cov.sxy.len();
    let span = 4.0 * (cov.sxy.amax() / cov.sxx.diagonal().min().max(1e-3) + 1.0);
    let mut a = DVector::zeros(d);
    let mut value = lasso_value(cov, &a, lambda);
    for _ in 0..2000 {
        for j in 0..d {
            let probe = |t: f64| {
                let mut b = a.clone();
                b[j] = t;
                lasso_value(cov, &b, lambda)
            };
            a[j] = scan_coordinate(probe, a[j], span);
        }
        let next = lasso_value(cov, &a, lambda);
        if value - next < 1e-14 {
            break;
        }
        value = next;
    }
    a
}

/// Largest violation of the lasso subgradient conditions.
pub fn lasso_kkt_violation(cov: &CovariancePair, a: &DVector<f64>, lambda: f64) -> f64 {
    let grad = 2.0 * (&cov.sxx * a - &cov.sxy);
    (0..a.len())
        .map(|j| {
            if a[j] != 0.0 {
                (grad[j] + lambda * a[j].signum()).abs()
            } else {
                (grad[j].abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Ridge on the samples themselves: least squares on `[x; √λ·I] a ≈ [y; 0]`
/// via QR.
pub fn ridge_from_samples(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let (n, d) = x.shape();
    let mut aug = DMatrix::zeros(n + d, d);
    aug.view_mut((0, 0), (n, d)).copy_from(x);
    for j in 0..d {
        aug[(n + j, j)] = lambda.sqrt();
    }
    let mut rhs = DVector::zeros(n + d);
    rhs.rows_mut(0, n).copy_from(y);
    let qr = aug.qr();
    let qty = qr.q().transpose() * rhs;
    qr.r().solve_upper_triangular(&qty).unwrap()
}

/// Standard normal discretized on `points` nodes over ±8 standard
/// deviations, with trapezoid weights normalized to sum to one.
pub fn normal_grid(points: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 16.0 / (points - 1) as f64;
    let nodes: Vec<f64> = (0..points).map(|k| -8.0 + h * k as f64).collect();
    let raw: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let edge = if k == 0 || k == points - 1 { 0.5 } else { 1.0 };
            edge * (-0.5 * t * t).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    (nodes, raw.into_iter().map(|w| w / total).collect())
}

/// Observational and interventional squared loss of `f` for the scalar
/// model `X = m·Z + s·N`, `Y = a·X + c·Z + E`, integrated over a 2001×2001
/// grid in `(Z, N)`. The interventional loss pairs each `x` with an
/// independent copy of `Z` whose moments come from the same grid.
pub fn quadrature_losses(m: f64, s: f64, a: f64, c: f64, sigma_e: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let (nodes, weights) = normal_grid(2001);
    let mu1: f64 = nodes.iter().zip(&weights).map(|(z, w)| w * z).sum();
    let mu2: f64 = nodes.iter().zip(&weights).map(|(z, w)| w * z * z).sum();
    let (mut obs, mut int) = (0.0, 0.0);
    for (z, wz) in nodes.iter().zip(&weights) {
        for (n, wn) in nodes.iter().zip(&weights) {
            let x = m * z + s * n;
            let r = a * x - f(x);
            let w = wz * wn;
            obs += w * (r + c * z).powi(2);
            int += w * (r * r + 2.0 * r * c * mu1 + c * c * mu2);
        }
    }
    let noise = sigma_e * sigma_e;
    (obs + noise, int + noise)
}
