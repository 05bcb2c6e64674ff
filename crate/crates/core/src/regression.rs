//! OLS, Ridge and Lasso computed from covariance statistics alone.
//!
//! Objectives follow the unscaled convention
//! `λ·P(a) + ‖Y − Xa‖²`, which in covariance form reads
//! `λ·P(a) − 2aᵀΣ_XY + aᵀΣ_XX a` (the constant `‖Y‖²` is dropped). With
//! `P = ‖·‖₁` the coordinate-wise soft threshold is therefore `λ/2`, not `λ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::{CovariancePair, Method, RegressionVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Coordinate descent stops once no coefficient moves by more than this.
    pub tolerance: f64,
    /// Relative eigenvalue cutoff for the pseudoinverse; `None` means `1e-12·d`.
    pub pseudoinverse_rtol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iterations: 100_000, tolerance: 1e-10, pseudoinverse_rtol: None }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if let Some(r) = self.pseudoinverse_rtol {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument("pseudoinverse_rtol must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn rtol_for(&self, d: usize) -> f64 {
        self.pseudoinverse_rtol.unwrap_or(1e-12 * d.max(1) as f64)
    }
}

/// Penalized estimators that `solve_lambda_for_norm` can tune.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Penalty {
    Ridge,
    Lasso,
}

impl Penalty {
    pub fn method(self) -> Method {
        match self {
            Penalty::Ridge => Method::Ridge,
            Penalty::Lasso => Method::Lasso,
        }
    }
}

/// Eigendecomposition of `Σ_XX` reused across many ridge solves.
#[derive(Debug, Clone)]
pub struct RidgePath {
    eigenvalues: DVector<f64>,
    /// `Uᵀ Σ_XY`
    projected: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    cutoff: f64,
}

impl RidgePath {
    pub fn new(cov: &CovariancePair, cfg: &SolverConfig) -> Self {
        let eig = SymmetricEigen::new(cov.sxx.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let cutoff = cfg.rtol_for(cov.dim()) * max;
        let projected = eig.eigenvectors.transpose() * &cov.sxy;
        Self { eigenvalues: eig.eigenvalues, projected, eigenvectors: eig.eigenvectors, cutoff }
    }

    /// `(Σ_XX + λI)⁻¹ Σ_XY`; at `λ = 0` eigenvalues below the cutoff are
    /// dropped (pseudoinverse) and the returned flag reports whether any were.
    pub fn solve(&self, lambda: f64) -> (DVector<f64>, bool) {
        let mut truncated = false;
        let scaled = DVector::from_fn(self.eigenvalues.len(), |j, _| {
            let ev = self.eigenvalues[j].max(0.0);
            if lambda == 0.0 && ev <= self.cutoff {
                truncated = true;
                0.0
            } else {
                self.projected[j] / (ev + lambda)
            }
        });
        (&self.eigenvectors * scaled, truncated)
    }

    pub fn squared_norm(&self, lambda: f64) -> f64 {
        // Uᵀ is orthogonal, so the norm can be read off in the eigenbasis.
        self.eigenvalues
            .iter()
            .zip(self.projected.iter())
            .map(|(&ev, &p)| {
                let ev = ev.max(0.0);
                if lambda == 0.0 && ev <= self.cutoff {
                    0.0
                } else {
                    (p / (ev + lambda)).powi(2)
                }
            })
            .sum()
    }
}

/// Least squares `pinv(Σ_XX)·Σ_XY`.
pub fn ols_from_cov(cov: &CovariancePair, cfg: &SolverConfig) -> Result<RegressionVector> {
    cfg.validate()?;
    let (coefficients, pinv_fallback) = RidgePath::new(cov, cfg).solve(0.0);
    Ok(RegressionVector { coefficients, method: Method::Ols, lambda: 0.0, pinv_fallback })
}

/// Ridge `(Σ_XX + λI)⁻¹ Σ_XY`. At `λ = 0` with a rank-deficient `Σ_XX` the
/// pseudoinverse is used and `pinv_fallback` is set.
pub fn ridge_from_cov(cov: &CovariancePair, lambda: f64, cfg: &SolverConfig) -> Result<RegressionVector> {
    cfg.validate()?;
    check_lambda(lambda)?;
    let (coefficients, pinv_fallback) = RidgePath::new(cov, cfg).solve(lambda);
    Ok(RegressionVector { coefficients, method: Method::Ridge, lambda, pinv_fallback })
}

/// Lasso by cyclic coordinate descent on the covariance form.
pub fn lasso_from_cov(cov: &CovariancePair, lambda: f64, cfg: &SolverConfig) -> Result<RegressionVector> {
    lasso_from_cov_warm(cov, lambda, cfg, None)
}

/// Lasso objective `λ‖a‖₁ − 2aᵀΣ_XY + aᵀΣ_XX a`.
pub fn lasso_objective(cov: &CovariancePair, a: &DVector<f64>, lambda: f64) -> f64 {
    lambda * a.lp_norm(1) - 2.0 * a.dot(&cov.sxy) + a.dot(&(&cov.sxx * a))
}

/// Ridge objective `λ‖a‖² − 2aᵀΣ_XY + aᵀΣ_XX a`.
pub fn ridge_objective(cov: &CovariancePair, a: &DVector<f64>, lambda: f64) -> f64 {
    lambda * a.norm_squared() - 2.0 * a.dot(&cov.sxy) + a.dot(&(&cov.sxx * a))
}

pub fn soft_threshold(value: f64, threshold: f64) -> f64 {
    value.signum() * (value.abs() - threshold).max(0.0)
}

/// Lasso solve starting from `warm` (or zero).
pub fn lasso_from_cov_warm(
    cov: &CovariancePair,
    lambda: f64,
    cfg: &SolverConfig,
    warm: Option<&DVector<f64>>,
) -> Result<RegressionVector> {
    cfg.validate()?;
    check_lambda(lambda)?;
    if lambda == 0.0 {
        let (coefficients, pinv_fallback) = RidgePath::new(cov, cfg).solve(0.0);
        return Ok(RegressionVector { coefficients, method: Method::Lasso, lambda, pinv_fallback });
    }
    let coefficients = coordinate_descent(cov, lambda, cfg, warm)?;
    Ok(RegressionVector { coefficients, method: Method::Lasso, lambda, pinv_fallback: false })
}

fn coordinate_descent(
    cov: &CovariancePair,
    lambda: f64,
    cfg: &SolverConfig,
    warm: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let d = cov.dim();
    let sxx = &cov.sxx;
    let sxy = &cov.sxy;
    let half = 0.5 * lambda;
    let mut a = match warm {
        Some(w) if w.len() == d => w.clone(),
        _ => DVector::zeros(d),
    };
    // Keep Σ_XX·a current so each coordinate update is O(d).
    let mut sa = sxx * &a;
    let mut last_support: Option<Vec<bool>> = None;
    let mut tried_support: Option<Vec<bool>> = None;

    for sweep in 1..=cfg.max_iterations {
        let mut max_change = 0.0f64;
        for j in 0..d {
            let sjj = sxx[(j, j)];
            let old = a[j];
            let new = if sjj <= 0.0 {
                0.0
            } else {
                let rho = sxy[j] - (sa[j] - sjj * old);
                soft_threshold(rho, half) / sjj
            };
            if new != old {
                let delta = new - old;
                sa.axpy(delta, &sxx.column(j), 1.0);
                a[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < cfg.tolerance {
            return Ok(a);
        }
        let support: Vec<bool> = a.iter().map(|&v| v != 0.0).collect();
        let newly_stable = last_support.as_ref() == Some(&support) && tried_support.as_ref() != Some(&support);
        if newly_stable || sweep % FINISH_EVERY == 0 {
            tried_support = Some(support.clone());
            if let Some(exact) = feature_sign_finish(cov, lambda, &a) {
                return Ok(exact);
            }
        }
        last_support = Some(support);
    }
    Err(Error::NoConvergence { max_iterations: cfg.max_iterations, last_iterate: a })
}

/// Sweeps between attempts to finish coordinate descent exactly.
const FINISH_EVERY: usize = 10;

/// Active-set ("feature-sign") search started from a coordinate descent
/// iterate. Each step solves the stationarity equations on the active set
/// for the current sign pattern and line-searches towards that solution,
/// stopping at zero crossings, so the objective never increases. Returns
/// `None` if a subsystem is singular or the iteration cap is hit.
fn feature_sign_finish(cov: &CovariancePair, lambda: f64, start: &DVector<f64>) -> Option<DVector<f64>> {
    let d = cov.dim();
    let sxx = &cov.sxx;
    let sxy = &cov.sxy;
    let start_objective = lasso_objective(cov, start, lambda);
    let mut a = start.clone();
    let mut signs: Vec<f64> = a.iter().map(|v| if *v == 0.0 { 0.0 } else { v.signum() }).collect();
    let scale = lambda + sxy.amax();
    let kkt_slack = 1e-12 * scale;
    let mut exact = false;

    for _ in 0..(20 * d + 100) {
        let grad = 2.0 * (sxx * &a - sxy);
        let active_ok = exact || (0..d).all(|j| signs[j] == 0.0 || (grad[j] + lambda * signs[j]).abs() <= 1e-9 * scale);
        if active_ok {
            let entering = (0..d)
                .filter(|&j| signs[j] == 0.0)
                .max_by(|&i, &j| grad[i].abs().total_cmp(&grad[j].abs()));
            match entering {
                Some(j) if grad[j].abs() > lambda + kkt_slack => signs[j] = -grad[j].signum(),
                _ => {
                    return (lasso_objective(cov, &a, lambda) <= start_objective).then_some(a);
                }
            }
        }

        let active: Vec<usize> = (0..d).filter(|&j| signs[j] != 0.0).collect();
        let sub = sxx.select_rows(&active).select_columns(&active);
        let rhs = DVector::from_fn(active.len(), |k, _| sxy[active[k]] - 0.5 * lambda * signs[active[k]]);
        let target = sub.cholesky()?.solve(&rhs);
        if target.iter().any(|v| !v.is_finite()) {
            return None;
        }

        // Candidate step lengths: the full step and every zero crossing.
        let mut steps = vec![1.0];
        for (k, &j) in active.iter().enumerate() {
            let (from, to) = (a[j], target[k]);
            if from != 0.0 && from.signum() != to.signum() {
                steps.push(from / (from - to));
            }
        }
        let point = |t: f64| {
            let mut p = a.clone();
            for (k, &j) in active.iter().enumerate() {
                p[j] = a[j] + t * (target[k] - a[j]);
            }
            p
        };
        let mut best_t = 1.0;
        let mut best = point(1.0);
        let mut best_obj = lasso_objective(cov, &best, lambda);
        for &t in &steps[1..] {
            let mut p = point(t);
            // Snap the crossing coordinate to exactly zero.
            for (k, &j) in active.iter().enumerate() {
                let from = a[j];
                if from != 0.0 && from.signum() != target[k].signum() && (from / (from - target[k]) - t).abs() <= 1e-15 {
                    p[j] = 0.0;
                }
            }
            let obj = lasso_objective(cov, &p, lambda);
            if obj < best_obj {
                best_obj = obj;
                best = p;
                best_t = t;
            }
        }
        exact = best_t == 1.0 && active.iter().all(|&j| best[j] != 0.0 && best[j].signum() == signs[j]);
        a = best;
        for j in 0..d {
            signs[j] = if a[j] == 0.0 { 0.0 } else { a[j].signum() };
        }
    }
    None
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    Ok(())
}

pub fn solve_penalized(
    cov: &CovariancePair,
    penalty: Penalty,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<RegressionVector> {
    match penalty {
        Penalty::Ridge => ridge_from_cov(cov, lambda, cfg),
        Penalty::Lasso => lasso_from_cov(cov, lambda, cfg),
    }
}

/// Squared coefficient norm at each `λ` of an ascending grid.
pub fn solution_norm_curve(
    cov: &CovariancePair,
    penalty: Penalty,
    lambdas: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("lambda grid must be ascending".into()));
    }
    lambdas.iter().try_for_each(|&l| check_lambda(l))?;
    match penalty {
        Penalty::Ridge => {
            let path = RidgePath::new(cov, cfg);
            Ok(lambdas.iter().map(|&l| (l, path.squared_norm(l))).collect())
        }
        Penalty::Lasso => {
            let mut warm: Option<DVector<f64>> = None;
            let mut out = Vec::with_capacity(lambdas.len());
            for &l in lambdas {
                let v = lasso_from_cov_warm(cov, l, cfg, warm.as_ref())?;
                out.push((l, v.squared_norm()));
                warm = Some(v.coefficients);
            }
            Ok(out)
        }
    }
}

/// Result of tuning `λ` to hit a squared coefficient norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NormMatch {
    pub lambda: f64,
    pub vector: RegressionVector,
    /// The target exceeded the OLS squared norm and was clamped to `λ = 0`.
    pub clamped_to_ols: bool,
}

const BRACKET_START: f64 = 1e-8;
const MAX_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 400;
const ZERO_NORM: f64 = 1e-12;

/// Finds `λ` with `‖a_λ‖² = target_sq_norm` to a relative accuracy of 1e-6
/// by geometric bracketing from `1e-8` followed by bisection on `log λ`.
///
/// The lasso squared norm is continuous in `λ` but not always monotone, so
/// for lasso the result is one crossing of the target, not necessarily the
/// smallest such `λ`.
pub fn solve_lambda_for_norm(
    cov: &CovariancePair,
    penalty: Penalty,
    target_sq_norm: f64,
    cfg: &SolverConfig,
) -> Result<NormMatch> {
    cfg.validate()?;
    if !(target_sq_norm >= 0.0) || !target_sq_norm.is_finite() {
        return Err(Error::InvalidArgument(format!("target squared norm {target_sq_norm} is invalid")));
    }
    let ridge = RidgePath::new(cov, cfg);
    let (ols, ols_fallback) = ridge.solve(0.0);
    let ols_sq = ols.norm_squared();
    if target_sq_norm >= ols_sq {
        let vector = RegressionVector {
            coefficients: ols,
            method: penalty.method(),
            lambda: 0.0,
            pinv_fallback: ols_fallback,
        };
        return Ok(NormMatch { lambda: 0.0, vector, clamped_to_ols: target_sq_norm > ols_sq });
    }

    let mut warm: Option<DVector<f64>> = None;
    let mut eval = |lambda: f64| -> Result<RegressionVector> {
        match penalty {
            Penalty::Ridge => {
                let (coefficients, pinv_fallback) = ridge.solve(lambda);
                Ok(RegressionVector { coefficients, method: Method::Ridge, lambda, pinv_fallback })
            }
            Penalty::Lasso => {
                let v = lasso_from_cov_warm(cov, lambda, cfg, warm.as_ref())?;
                warm = Some(v.coefficients.clone());
                Ok(v)
            }
        }
    };

    let accuracy = 1e-6 * target_sq_norm.max(ZERO_NORM);
    let goal = if target_sq_norm == 0.0 { ZERO_NORM } else { target_sq_norm };

    // Bracket: norm(lo) > goal >= norm(hi).
    let mut lo = 0.0;
    let mut hi = BRACKET_START;
    let mut hi_vec = eval(hi)?;
    let mut doublings = 0;
    while hi_vec.squared_norm() > goal {
        if doublings == MAX_DOUBLINGS {
            return Err(Error::BracketingFailure(MAX_DOUBLINGS));
        }
        lo = hi;
        hi *= 2.0;
        hi_vec = eval(hi)?;
        doublings += 1;
    }
    if target_sq_norm == 0.0 {
        return Ok(NormMatch { lambda: hi, vector: hi_vec, clamped_to_ols: false });
    }
    if (hi_vec.squared_norm() - target_sq_norm).abs() <= accuracy {
        return Ok(NormMatch { lambda: hi, vector: hi_vec, clamped_to_ols: false });
    }

    let mut best = hi_vec;
    for _ in 0..MAX_BISECTIONS {
        let mid = if lo == 0.0 { 0.5 * hi } else { (lo * hi).sqrt() };
        if mid <= lo || mid >= hi {
            break;
        }
        let v = eval(mid)?;
        let sq = v.squared_norm();
        let miss = (sq - target_sq_norm).abs();
        if miss < (best.squared_norm() - target_sq_norm).abs() {
            best = v;
        }
        if miss <= accuracy {
            break;
        }
        if sq > target_sq_norm {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(NormMatch { lambda: best.lambda, vector: best, clamped_to_ols: false })
}
