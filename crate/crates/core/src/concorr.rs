//! The confounder-correction pipeline and the cross-validated baselines it is
//! compared against.
//!
//! ConCorr: center (and optionally normalize) → covariances → OLS → estimate
//! confounding strength `β̂` → target squared norm `(1 − β̂)‖â‖²` → tune `λ`
//! so the penalized solution has that norm → final solve.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::confounding::{self, causal_norm_target, estimate_confounding_strength, ConfoundingEstimate};
use crate::data::{center_and_scale, empirical_covariances, CovariancePair, Dataset, RegressionVector};
use crate::error::{Error, Result};
use crate::regression::{
    lasso_from_cov_warm, ols_from_cov, solve_lambda_for_norm, solve_penalized, Penalty, RidgePath, SolverConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ConCorrResult {
    pub vector: RegressionVector,
    pub ols: RegressionVector,
    pub estimate: ConfoundingEstimate,
    pub beta_hat: f64,
    pub target_sq_norm: f64,
    pub lambda: f64,
    /// Coefficients are in the scale of unit-variance predictors.
    pub normalized: bool,
    pub warnings: Vec<String>,
}

/// Runs ConCorr on raw samples.
pub fn concorr_fit(data: &Dataset, penalty: Penalty, normalize: bool, cfg: &SolverConfig) -> Result<ConCorrResult> {
    let centered = center_and_scale(data, normalize)?;
    let cov = empirical_covariances(&centered)?;
    let mut result = concorr_from_cov(&cov, penalty, cfg)?;
    result.normalized = normalize;
    Ok(result)
}

/// ConCorr from covariance statistics (population or sample).
pub fn concorr_from_cov(cov: &CovariancePair, penalty: Penalty, cfg: &SolverConfig) -> Result<ConCorrResult> {
    let ols = ols_from_cov(cov, cfg)?;
    let mut warnings = Vec::new();
    if ols.pinv_fallback {
        warnings.push("covariance matrix is rank deficient; OLS used the pseudoinverse".to_owned());
    }
    let estimate = estimate_confounding_strength(&cov.sxx, &ols.coefficients, confounding::DEFAULT_RTOL)?;
    if estimate.degenerate {
        warnings.push("eigenvalue spectrum is nearly isotropic; confounding strength set to 0".to_owned());
    }
    let target_sq_norm = causal_norm_target(&estimate, &ols.coefficients);
    let matched = solve_lambda_for_norm(cov, penalty, target_sq_norm, cfg)?;
    if matched.clamped_to_ols {
        warnings.push(format!(
            "target squared norm {target_sq_norm:e} exceeds the OLS squared norm; using lambda = 0"
        ));
    }
    let lambda = matched.lambda;
    // Final solve at the matched λ from a cold start.
    let vector = if lambda == 0.0 {
        matched.vector
    } else {
        solve_penalized(cov, penalty, lambda, cfg)?
    };
    let achieved = vector.squared_norm();
    if !matched.clamped_to_ols && (achieved - target_sq_norm).abs() > 1e-6 * target_sq_norm.max(1e-12) {
        warnings.push(format!(
            "achieved squared norm {achieved:e} misses the target {target_sq_norm:e}"
        ));
    }
    Ok(ConCorrResult {
        beta_hat: estimate.beta_hat,
        vector,
        ols,
        estimate,
        target_sq_norm,
        lambda,
        normalized: false,
        warnings,
    })
}

/// Cross-validation scheme for the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Folds {
    LeaveOneOut,
    K(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvFit {
    pub lambda: f64,
    pub vector: RegressionVector,
    pub grid: Vec<f64>,
    /// Mean held-out squared error per grid point (raw target units).
    pub scores: Vec<f64>,
}

pub const DEFAULT_GRID_POINTS: usize = 40;

/// `points` log-spaced values spanning `[1e-6, 1e3]·tr(Σ_XX)/d`.
pub fn default_lambda_grid(cov: &CovariancePair, points: usize) -> Vec<f64> {
    let d = cov.dim().max(1) as f64;
    let scale = cov.sxx.trace() / d;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let (lo, hi) = (1e-6f64.ln(), 1e3f64.ln());
    (0..points)
        .map(|i| {
            let f = if points == 1 { 0.0 } else { i as f64 / (points - 1) as f64 };
            scale * (lo + f * (hi - lo)).exp()
        })
        .collect()
}

/// Column means and scales mapping raw samples onto the fitting scale.
#[derive(Debug, Clone)]
struct Standardizer {
    x_mean: DVector<f64>,
    x_scale: DVector<f64>,
    y_mean: f64,
}

impl Standardizer {
    fn fit(data: &Dataset, normalize: bool) -> Self {
        let n = data.n_samples() as f64;
        let x_mean = DVector::from_fn(data.n_features(), |j, _| data.x.column(j).mean());
        let x_scale = DVector::from_fn(data.n_features(), |j, _| {
            if normalize {
                let m = x_mean[j];
                (data.x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                1.0
            }
        });
        Self { x_mean, x_scale, y_mean: data.y.mean() }
    }

    fn predict(&self, x: &DMatrix<f64>, coefficients: &DVector<f64>) -> DVector<f64> {
        let raw = coefficients.component_div(&self.x_scale);
        let offset = self.y_mean - self.x_mean.dot(&raw);
        (x * raw).add_scalar(offset)
    }
}

/// Picks `λ` from `grid` by minimum mean held-out squared error, then refits
/// on all samples. Leave-one-out ridge uses the closed-form hat-matrix
/// identity; every other combination refits per fold.
pub fn cv_baseline_fit(
    data: &Dataset,
    penalty: Penalty,
    folds: Folds,
    grid: &[f64],
    normalize: bool,
    cfg: &SolverConfig,
) -> Result<CvFit> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidArgument("lambda grid must be finite and nonnegative".into()));
    }
    let n = data.n_samples();
    let k = match folds {
        Folds::LeaveOneOut => n,
        Folds::K(k) => k,
    };
    if k < 2 || k > n {
        return Err(Error::FoldTooSmall { n, folds: k });
    }

    // Score an ascending copy so lasso can warm start, then map back.
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| grid[i]).collect();

    let sorted_scores = match (penalty, folds) {
        (Penalty::Ridge, Folds::LeaveOneOut) => ridge_loo_scores(data, &sorted, normalize)?,
        _ => kfold_scores(data, penalty, k, &sorted, normalize, cfg)?,
    };
    let mut scores = vec![0.0; grid.len()];
    for (pos, &i) in order.iter().enumerate() {
        scores[i] = sorted_scores[pos];
    }

    let mut best = 0;
    for pos in 1..sorted.len() {
        if sorted_scores[pos] < sorted_scores[best] {
            best = pos;
        }
    }
    let lambda = sorted[best];
    let centered = center_and_scale(data, normalize)?;
    let cov = empirical_covariances(&centered)?;
    let vector = solve_penalized(&cov, penalty, lambda, cfg)?;
    Ok(CvFit { lambda, vector, grid: grid.to_vec(), scores })
}

fn ridge_loo_scores(data: &Dataset, lambdas: &[f64], normalize: bool) -> Result<Vec<f64>> {
    let centered = center_and_scale(data, normalize)?;
    let n = data.n_samples();
    let root = ((n - 1) as f64).sqrt();
    let svd = centered.x.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let s_max = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-12 * s_max.max(f64::MIN_POSITIVE) * n as f64)
        .collect();
    let u = u.select_columns(&keep);
    let s2: Vec<f64> = keep.iter().map(|&k| svd.singular_values[k].powi(2)).collect();
    let uty = u.transpose() * &centered.y;
    let u_sq = u.map(|v| v * v);

    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let shrink = DVector::from_iterator(s2.len(), s2.iter().map(|&s| if s + lambda > 0.0 { s / (s + lambda) } else { 0.0 }));
            let fitted = &u * uty.component_mul(&shrink);
            let leverage = &u_sq * &shrink;
            let mut total = 0.0;
            for i in 0..n {
                let denom = 1.0 - leverage[i];
                if denom <= 1e-12 {
                    return f64::INFINITY;
                }
                // Back to raw target units.
                let r = (centered.y[i] - fitted[i]) / denom * root;
                total += r * r;
            }
            total / n as f64
        })
        .collect())
}

fn kfold_scores(
    data: &Dataset,
    penalty: Penalty,
    k: usize,
    lambdas: &[f64],
    normalize: bool,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let n = data.n_samples();
    let fold_of = |i: usize| i * k / n;
    let per_fold: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|fold| -> Result<Vec<f64>> {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of(i) != fold).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of(i) == fold).collect();
            let train_data = Dataset::new(
                data.x.select_rows(&train),
                DVector::from_fn(train.len(), |r, _| data.y[train[r]]),
                None,
                None,
                data.column_names.clone(),
            )?;
            let std = Standardizer::fit(&train_data, normalize);
            let cov = empirical_covariances(&center_and_scale(&train_data, normalize)?)?;
            let x_test = data.x.select_rows(&test);
            let y_test = DVector::from_fn(test.len(), |r, _| data.y[test[r]]);
            let ridge = matches!(penalty, Penalty::Ridge).then(|| RidgePath::new(&cov, cfg));
            let mut warm: Option<DVector<f64>> = None;
            let mut sse = Vec::with_capacity(lambdas.len());
            for &lambda in lambdas {
                let coefficients = match &ridge {
                    Some(path) => path.solve(lambda).0,
                    None => {
                        let v = lasso_from_cov_warm(&cov, lambda, cfg, warm.as_ref())?.coefficients;
                        warm = Some(v.clone());
                        v
                    }
                };
                let pred = std.predict(&x_test, &coefficients);
                sse.push((&y_test - pred).norm_squared());
            }
            Ok(sse)
        })
        .collect::<Result<_>>()?;
    let mut totals = vec![0.0; lambdas.len()];
    for sse in &per_fold {
        for (t, s) in totals.iter_mut().zip(sse) {
            *t += s;
        }
    }
    Ok(totals.into_iter().map(|t| t / n as f64).collect())
}

/// Outcome of the drop-columns protocol: an (assumed unconfounded) full
/// regression provides the truth for the reduced system.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystemFit {
    pub kept_columns: Vec<String>,
    pub truth: DVector<f64>,
    pub result: ConCorrResult,
    pub error_concorr: f64,
    pub error_unregularized: f64,
}

/// Fits OLS on all predictors, restricts the coefficients to the columns
/// that survive `drop`, then runs ConCorr on the reduced predictors and
/// scores both against that truth.
pub fn reduced_system_fit(
    data: &Dataset,
    drop: &[String],
    penalty: Penalty,
    normalize: bool,
    cfg: &SolverConfig,
) -> Result<ReducedSystemFit> {
    for name in drop {
        if !data.column_names.contains(name) {
            return Err(Error::MissingColumn(name.clone()));
        }
    }
    let keep: Vec<usize> = (0..data.n_features()).filter(|&j| !drop.contains(&data.column_names[j])).collect();
    let full_cov = empirical_covariances(&center_and_scale(data, normalize)?)?;
    let full = ols_from_cov(&full_cov, cfg)?;
    let truth = DVector::from_fn(keep.len(), |k, _| full.coefficients[keep[k]]);
    let reduced = data.select_columns(&keep)?;
    let result = concorr_fit(&reduced, penalty, normalize, cfg)?;
    let error_concorr = crate::simulation::relative_squared_error(&result.vector.coefficients, &truth);
    let error_unregularized = crate::simulation::relative_squared_error(&result.ols.coefficients, &truth);
    Ok(ReducedSystemFit {
        kept_columns: reduced.column_names.clone(),
        truth,
        result,
        error_concorr,
        error_unregularized,
    })
}
