//! Observational versus interventional loss under a whitened confounder
//! `Z` that enters the target additively, `Y = Y′ + Z·c`, and a Monte Carlo
//! harness for the resulting uniform bound over function classes.
//!
//! For any predictor `f` with `g(x) = E[Y′ | x]` the two losses differ by
//!
//! ```text
//! E_do[(Y − f(X))²] − E[(Y − f(X))²] = 2·Σ_{(f−g)(X),Z}·c
//! ```
//!
//! The factor 2 comes from the cross term of the square. Every bound margin
//! below carries it as well.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{sphere_point, substream};
use crate::simulation::LinearScm;

/// Multiplier of the covariance term in the loss gap.
pub const GAP_FACTOR: f64 = 2.0;
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Linear-Gaussian instance: `X = Z·M` with `Σ_ZZ = I`, `Y′ = X·a + E` and
/// `Y = Y′ + Z·c`. In this model `g(x) = x·a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundedRegressionProblem {
    /// `ℓ × d`
    pub m: DMatrix<f64>,
    pub a: DVector<f64>,
    pub c: DVector<f64>,
    pub sigma_e: f64,
    /// Squared radius of the sphere the confounding vector is drawn from.
    pub variance_v: f64,
}

impl ConfoundedRegressionProblem {
    pub fn new(m: DMatrix<f64>, a: DVector<f64>, c: DVector<f64>, sigma_e: f64) -> Result<Self> {
        if m.ncols() != a.len() || m.nrows() != c.len() {
            return Err(Error::DimensionMismatch(format!(
                "M is {}x{}, a has {}, c has {}",
                m.nrows(),
                m.ncols(),
                a.len(),
                c.len()
            )));
        }
        if !(sigma_e >= 0.0) {
            return Err(Error::InvalidArgument("sigma_e must be nonnegative".into()));
        }
        let variance_v = c.norm_squared();
        Ok(Self { m, a, c, sigma_e, variance_v })
    }

    pub fn from_scm(scm: &LinearScm) -> Result<Self> {
        Self::new(scm.m.clone(), scm.a.clone(), scm.c.clone(), scm.sigma_e)
    }

    /// Same structure with confounding vectors drawn from the sphere of
    /// squared radius `variance_v`.
    pub fn with_variance(mut self, variance_v: f64) -> Result<Self> {
        if !(variance_v >= 0.0) {
            return Err(Error::InvalidArgument("variance must be nonnegative".into()));
        }
        self.variance_v = variance_v;
        Ok(self)
    }

    pub fn d(&self) -> usize {
        self.a.len()
    }

    pub fn ell(&self) -> usize {
        self.c.len()
    }

    /// `Σ_{(f−g)(X),Z} = M·(w − a)` for `f(x) = x·w`.
    pub fn cross_covariance(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.m * (w - &self.a)
    }

    /// `‖(f − g)(X)‖` in the covariance norm.
    pub fn function_distance(&self, w: &DVector<f64>) -> f64 {
        self.cross_covariance(w).norm()
    }

    /// `E[(Y − X·w)²]`.
    pub fn observational_loss(&self, w: &DVector<f64>) -> f64 {
        let u = &self.m * (&self.a - w);
        u.norm_squared() + 2.0 * u.dot(&self.c) + self.c.norm_squared() + self.sigma_e.powi(2)
    }

    /// `E_do[(Y − X·w)²]`: under `do(X = x)` the confounder is independent
    /// of `x`, so the cross term vanishes.
    pub fn interventional_loss(&self, w: &DVector<f64>) -> f64 {
        let u = &self.m * (&self.a - w);
        u.norm_squared() + self.c.norm_squared() + self.sigma_e.powi(2)
    }

    /// Interventional minus observational loss from covariances alone.
    pub fn loss_gap(&self, w: &DVector<f64>) -> f64 {
        GAP_FACTOR * self.cross_covariance(w).dot(&self.c)
    }
}

/// Scalar model for general (nonlinear) predictors: `Z, N ~ N(0, 1)`,
/// `X = mixing·Z + x_noise·N`, `Y′ = a·X + E`, `Y = Y′ + c·Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarConfoundedModel {
    pub mixing: f64,
    pub x_noise: f64,
    pub a: f64,
    pub c: f64,
    pub sigma_e: f64,
}

impl ScalarConfoundedModel {
    pub fn x_variance(&self) -> f64 {
        self.mixing.powi(2) + self.x_noise.powi(2)
    }

    /// `Σ_{(f−g)(X),Z} = E[(f − g)(X)·Z]`, using `E[Z | X] = (mixing/Var X)·X`
    /// and Gauss–Hermite quadrature over `X`.
    pub fn cross_covariance<F: Fn(f64) -> f64>(&self, f: F, rule: &GaussHermite) -> f64 {
        let var_x = self.x_variance();
        let sd = var_x.sqrt();
        let slope = self.mixing / var_x;
        rule.expectation(|t| {
            let x = sd * t;
            (f(x) - self.a * x) * slope * x
        })
    }

    pub fn loss_gap<F: Fn(f64) -> f64>(&self, f: F, rule: &GaussHermite) -> f64 {
        GAP_FACTOR * self.cross_covariance(f, rule) * self.c
    }
}

/// Gauss–Hermite rule for expectations under the standard normal law
/// (Golub–Welsch: nodes are eigenvalues of the Jacobi matrix).
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(points: usize) -> Self {
        let jacobi = DMatrix::from_fn(points, points, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let nodes = eig.eigenvalues.iter().cloned().collect();
        let weights = eig.eigenvectors.row(0).iter().map(|v| v * v).collect();
        Self { nodes, weights }
    }

    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }
}

/// Numerical rank of a matrix whose rows are the vectors `Σ_{f(X),Z}`.
pub fn correlation_dimension(cov_fz: &DMatrix<f64>, tol: f64) -> usize {
    if cov_fz.is_empty() {
        return 0;
    }
    let sv = cov_fz.clone().singular_values();
    let max = sv.max();
    if !(max > 0.0) {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * max).count()
}

/// Function classes for the bound check.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionClass {
    /// Linear predictors `x·w` for each listed `w`.
    FiniteLinearSet(Vec<DVector<f64>>),
    /// All linear `f` with `‖(f − g)(X)‖ ≤ radius`.
    LinearBall { radius: f64 },
}

impl FunctionClass {
    /// Uniform bound `b` on `‖(f − g)(X)‖` over the class.
    pub fn bound_b(&self, problem: &ConfoundedRegressionProblem) -> f64 {
        match self {
            FunctionClass::FiniteLinearSet(ws) => {
                ws.iter().map(|w| problem.function_distance(w)).fold(0.0, f64::max)
            }
            FunctionClass::LinearBall { radius } => *radius,
        }
    }

    /// Rows spanning `{Σ_{f(X),Z} : f ∈ F}`.
    pub fn covariance_rows(&self, problem: &ConfoundedRegressionProblem) -> DMatrix<f64> {
        match self {
            FunctionClass::FiniteLinearSet(ws) => {
                let ell = problem.ell();
                DMatrix::from_fn(ws.len(), ell, |i, k| (&problem.m * &ws[i])[k])
            }
            // For a ball of positive radius the span is the column space of M.
            FunctionClass::LinearBall { radius } if *radius > 0.0 => problem.m.transpose(),
            FunctionClass::LinearBall { .. } => DMatrix::zeros(0, problem.ell()),
        }
    }

    pub fn correlation_dimension(&self, problem: &ConfoundedRegressionProblem) -> usize {
        correlation_dimension(&self.covariance_rows(problem), DEFAULT_RANK_TOL)
    }

    /// `sup_f` of the loss gap for confounding vector `c`.
    fn sup_gap(&self, problem: &ConfoundedRegressionProblem, basis: Option<&DMatrix<f64>>, c: &DVector<f64>) -> f64 {
        match self {
            FunctionClass::FiniteLinearSet(ws) => ws
                .iter()
                .map(|w| GAP_FACTOR * problem.cross_covariance(w).dot(c))
                .fold(f64::NEG_INFINITY, f64::max),
            // {M·u : ‖M·u‖ ≤ r} is the radius-r ball of col(M); the supremum
            // of its inner product with c is r·‖P_col(M) c‖.
            FunctionClass::LinearBall { radius } => match basis {
                Some(q) => GAP_FACTOR * radius * (q.transpose() * c).norm(),
                None => 0.0,
            },
        }
    }
}

/// Orthonormal basis of the column space of `m`.
fn column_space_basis(m: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let svd = m.clone().svd(true, false);
    let u = svd.u?;
    let max = svd.singular_values.max();
    if !(max > 0.0) {
        return None;
    }
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > tol * max).collect();
    Some(u.select_columns(&keep))
}

/// `e^{n(1 − β + ln β)/2}`.
pub fn tail_probability_bound(n_dim: usize, beta: f64) -> f64 {
    (n_dim as f64 * (1.0 - beta + beta.ln()) / 2.0).exp()
}

fn binomial_std_error(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailCheck {
    pub empirical_freq: f64,
    pub bound: f64,
    /// Binomial standard error of the frequency at the bound.
    pub std_error: f64,
    pub trials: usize,
}

impl TailCheck {
    pub fn within(&self, std_errors: f64) -> bool {
        self.empirical_freq <= self.bound + std_errors * self.std_error
    }
}

/// Trials are split into this many independent random streams.
const CHUNKS: usize = 64;

/// Frequency with which a uniform unit vector in `ℝ^m` puts at least
/// `β·n_dim/m` of its squared length on a fixed `n_dim`-dimensional subspace.
pub fn jl_tail_check(m: usize, n_dim: usize, beta: f64, trials: usize, seed: u64) -> Result<TailCheck> {
    if n_dim == 0 || n_dim > m {
        return Err(Error::InvalidArgument(format!("need 1 <= n_dim <= m, got n_dim={n_dim}, m={m}")));
    }
    if !(beta > 1.0) {
        return Err(Error::InvalidArgument("beta must exceed 1".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let threshold = beta * n_dim as f64 / m as f64;
    let hits: usize = chunk_ranges(trials)
        .into_par_iter()
        .enumerate()
        .map(|(chunk, range)| {
            let mut rng = substream(seed, chunk as u64);
            range
                .filter(|_| {
                    // The subspace is the first n_dim coordinates.
                    let v = sphere_point(&mut rng, m, 1.0);
                    v.rows(0, n_dim).norm_squared() >= threshold
                })
                .count()
        })
        .sum();
    let bound = tail_probability_bound(n_dim, beta);
    Ok(TailCheck {
        empirical_freq: hits as f64 / trials as f64,
        bound,
        std_error: binomial_std_error(bound.min(1.0), trials),
        trials,
    })
}

fn chunk_ranges(trials: usize) -> Vec<std::ops::Range<usize>> {
    let chunks = CHUNKS.min(trials);
    (0..chunks).map(|k| (k * trials / chunks)..((k + 1) * trials / chunks)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTrial {
    pub trial: usize,
    pub sup_gap: f64,
    pub margin: f64,
    pub violated: bool,
}

/// Quantiles of `margin − sup_gap` across trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackStats {
    pub min: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheckReport {
    pub violation_freq: f64,
    /// Failure probability bound `e^{n(1 − β + ln β)/2}` with `n = d_corr + 1`.
    pub prob_bound: f64,
    pub std_error: f64,
    pub d_corr: usize,
    pub b: f64,
    pub margin: f64,
    pub slack: SlackStats,
    pub trials: Vec<BoundTrial>,
}

impl BoundCheckReport {
    pub fn within(&self, std_errors: f64) -> bool {
        self.violation_freq <= self.prob_bound + std_errors * self.std_error
    }
}

/// Draws the confounding vector uniformly from the sphere of radius `√V`
/// and records how often the loss gap of some member of the class exceeds
/// `2·b·√(V·β·(d_corr + 1)/ℓ)`.
pub fn theorem3_violation_check(
    problem: &ConfoundedRegressionProblem,
    class: &FunctionClass,
    beta: f64,
    trials: usize,
    seed: u64,
) -> Result<BoundCheckReport> {
    if !(beta > 1.0) {
        return Err(Error::InvalidArgument("beta must exceed 1".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let ell = problem.ell();
    let d_corr = class.correlation_dimension(problem);
    if ell <= d_corr {
        return Err(Error::DimensionTooSmall { ell, d_corr });
    }
    let b = class.bound_b(problem);
    let v = problem.variance_v;
    let margin = GAP_FACTOR * b * (v * beta * (d_corr + 1) as f64 / ell as f64).sqrt();
    let basis = match class {
        FunctionClass::LinearBall { .. } => column_space_basis(&problem.m, DEFAULT_RANK_TOL),
        FunctionClass::FiniteLinearSet(_) => None,
    };
    let radius = v.sqrt();

    let per_chunk: Vec<Vec<BoundTrial>> = chunk_ranges(trials)
        .into_par_iter()
        .enumerate()
        .map(|(chunk, range)| {
            let mut rng = substream(seed, chunk as u64);
            range
                .map(|trial| {
                    let c = sphere_point(&mut rng, ell, radius);
                    let sup_gap = class.sup_gap(problem, basis.as_ref(), &c);
                    BoundTrial { trial, sup_gap, margin, violated: sup_gap > margin }
                })
                .collect()
        })
        .collect();
    let trials_out: Vec<BoundTrial> = per_chunk.into_iter().flatten().collect();
    let violations = trials_out.iter().filter(|t| t.violated).count();
    let prob_bound = tail_probability_bound(d_corr + 1, beta);
    Ok(BoundCheckReport {
        violation_freq: violations as f64 / trials as f64,
        prob_bound,
        std_error: binomial_std_error(prob_bound.min(1.0), trials),
        d_corr,
        b,
        margin,
        slack: slack_stats(&trials_out),
        trials: trials_out,
    })
}

fn slack_stats(trials: &[BoundTrial]) -> SlackStats {
    let mut slack: Vec<f64> = trials.iter().map(|t| t.margin - t.sup_gap).collect();
    slack.sort_by(f64::total_cmp);
    let q = |p: f64| slack[((slack.len() - 1) as f64 * p).round() as usize];
    SlackStats { min: q(0.0), q05: q(0.05), median: q(0.5), q95: q(0.95), max: q(1.0) }
}

pub const BOUND_REPORT_HEADER: [&str; 4] = ["trial", "sup_gap", "margin", "violated"];

pub fn write_bound_trials<W: Write>(trials: &[BoundTrial], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(BOUND_REPORT_HEADER)?;
    for t in trials {
        wtr.write_record([
            t.trial.to_string(),
            t.sup_gap.to_string(),
            t.margin.to_string(),
            (t.violated as u8).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Linear-Gaussian problem with an `ℓ × d` standard normal mixing matrix,
/// `a ~ N(0, I)` and a confounding vector on the sphere of squared radius `V`.
pub fn random_problem(ell: usize, d: usize, variance_v: f64, sigma_e: f64, seed: u64) -> Result<ConfoundedRegressionProblem> {
    let mut rng = substream(seed, 0);
    let m = crate::rng::normal_matrix(&mut rng, ell, d);
    let a = crate::rng::normal_vector(&mut rng, d, 1.0);
    let c = sphere_point(&mut rng, ell, variance_v.max(0.0).sqrt());
    ConfoundedRegressionProblem::new(m, a, c, sigma_e)?.with_variance(variance_v)
}
