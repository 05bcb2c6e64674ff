//! Data generators for the unconfounded finite-sample setting (scenario 1)
//! and the confounded setting (scenario 2), evaluation metrics, and the
//! seeded experiment runner.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::concorr::{concorr_from_cov, cv_baseline_fit, default_lambda_grid, Folds, DEFAULT_GRID_POINTS};
use crate::confounding::confounding_strength;
use crate::data::{center_and_scale, empirical_covariances, CovariancePair, Dataset};
use crate::error::{Error, Result};
use crate::regression::{ols_from_cov, Penalty, SolverConfig};
use crate::rng::{normal_matrix, normal_vector, substream, uniform_in};

/// Ground truth of `X = Z·M`, `Y = X·a + Z·c + E` with `E ~ N(0, σ_E²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScm {
    /// `ℓ × d` mixing matrix.
    pub m: DMatrix<f64>,
    pub a: DVector<f64>,
    /// Confounding coefficients (length `ℓ`); all zero without confounding.
    pub c: DVector<f64>,
    pub sigma_e: f64,
    pub sigma_a: f64,
    pub sigma_c: f64,
}

impl LinearScm {
    pub fn d(&self) -> usize {
        self.a.len()
    }

    pub fn ell(&self) -> usize {
        self.c.len()
    }

    /// Population regression vector `ã = a + pinv(M)·c`.
    pub fn population_regression_vector(&self) -> DVector<f64> {
        let pinv = self.m.clone().pseudo_inverse(1e-12 * self.m.amax().max(1.0)).expect("non-negative epsilon");
        &self.a + pinv * &self.c
    }

    /// Population moments with whitened sources: `Σ_XX = MᵀM`,
    /// `Σ_XE = Mᵀc` and `Σ_XY = Σ_XX·a + Σ_XE`.
    pub fn population_covariances(&self) -> Result<CovariancePair> {
        let sxx = self.m.transpose() * &self.m;
        let sxe = self.m.transpose() * &self.c;
        let sxy = &sxx * &self.a + &sxe;
        CovariancePair::new(sxx, sxy, Some(sxe))
    }

    /// Confounding strength of the population regression vector.
    pub fn confounding_strength(&self) -> f64 {
        confounding_strength(&self.population_regression_vector(), &self.a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedInstance {
    /// Samples with the oracle total error `Y − X·a` in `e` and, when sources
    /// exist, `Z` in `z`.
    pub data: Dataset,
    pub scm: LinearScm,
    pub beta_true: f64,
}

/// Sampling ranges; each run draws `σ_a`, `σ_c`, `σ_E` uniformly from these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterRanges {
    pub sigma_a: (f64, f64),
    pub sigma_c: (f64, f64),
    pub sigma_e: (f64, f64),
}

impl Default for ParameterRanges {
    fn default() -> Self {
        Self { sigma_a: (0.0, 1.0), sigma_c: (0.0, 1.0), sigma_e: (0.0, 5.0) }
    }
}

/// Scenario 2: one standard normal `ℓ × d` mixing matrix per call, `n`
/// source samples `Z ~ N(0, I_ℓ)`, `X = Z·M`, `a ~ N(0, σ_a²)`,
/// `c ~ N(0, σ_c²)` and `Y = X·a + Z·c + E`.
pub fn gen_scenario2(d: usize, ell: usize, n: usize, ranges: ParameterRanges, seed: u64) -> Result<SimulatedInstance> {
    check_dims(d, n)?;
    if ell == 0 {
        return Err(Error::InvalidArgument("ell must be at least 1".into()));
    }
    let mut rng = substream(seed, 0);
    let m = normal_matrix(&mut rng, ell, d);
    let sigma_a = uniform_in(&mut rng, ranges.sigma_a);
    let sigma_c = uniform_in(&mut rng, ranges.sigma_c);
    let sigma_e = uniform_in(&mut rng, ranges.sigma_e);
    let a = normal_vector(&mut rng, d, sigma_a);
    let c = normal_vector(&mut rng, ell, sigma_c);
    let z = normal_matrix(&mut rng, n, ell);
    let noise = normal_vector(&mut rng, n, sigma_e);
    let x = &z * &m;
    let e = &z * &c + noise;
    let y = &x * &a + &e;
    let scm = LinearScm { m, a, c, sigma_e, sigma_a, sigma_c };
    let beta_true = scm.confounding_strength();
    let data = Dataset::from_xy(x, y)?;
    let data = Dataset { e: Some(e), z: Some(z), ..data };
    Ok(SimulatedInstance { data, scm, beta_true })
}

/// Scenario 1: no confounder. Predictor rows are i.i.d. `N(0, I_d)` when
/// `mixing_sources` is `None`; with `Some(ℓ)` they are `Z·M` for a random
/// standard normal `ℓ × d` matrix, i.e. Gaussian with covariance `MᵀM`.
/// `Y = X·a + E` and the confounding strength is 0.
pub fn gen_scenario1(
    d: usize,
    n: usize,
    mixing_sources: Option<usize>,
    sigma_a_range: (f64, f64),
    sigma_e_range: (f64, f64),
    seed: u64,
) -> Result<SimulatedInstance> {
    check_dims(d, n)?;
    let mut rng = substream(seed, 0);
    let ell = mixing_sources.unwrap_or(d);
    if ell == 0 {
        return Err(Error::InvalidArgument("ell must be at least 1".into()));
    }
    let m = match mixing_sources {
        Some(ell) => normal_matrix(&mut rng, ell, d),
        None => DMatrix::identity(d, d),
    };
    let sigma_a = uniform_in(&mut rng, sigma_a_range);
    let sigma_e = uniform_in(&mut rng, sigma_e_range);
    let a = normal_vector(&mut rng, d, sigma_a);
    let z = normal_matrix(&mut rng, n, ell);
    let e = normal_vector(&mut rng, n, sigma_e);
    let x = &z * &m;
    let y = &x * &a + &e;
    let scm = LinearScm { m, a, c: DVector::zeros(ell), sigma_e, sigma_a, sigma_c: 0.0 };
    let data = Dataset::from_xy(x, y)?;
    let data = Dataset { e: Some(e), z: Some(z), ..data };
    Ok(SimulatedInstance { data, scm, beta_true: 0.0 })
}

fn check_dims(d: usize, n: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    Ok(())
}

/// `‖a′ − a‖² / (‖a′ − a‖² + ‖a‖²)`; 0 when both vectors vanish.
pub fn relative_squared_error(a_prime: &DVector<f64>, a_true: &DVector<f64>) -> f64 {
    confounding_strength(a_prime, a_true)
}

/// Estimators compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentMethod {
    ConCorrRidge,
    ConCorrLasso,
    CvRidge,
    CvLasso,
}

impl ExperimentMethod {
    pub const ALL: [ExperimentMethod; 4] =
        [Self::ConCorrRidge, Self::ConCorrLasso, Self::CvRidge, Self::CvLasso];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ConCorrRidge => "concorr-ridge",
            Self::ConCorrLasso => "concorr-lasso",
            Self::CvRidge => "cv-ridge",
            Self::CvLasso => "cv-lasso",
        }
    }

    pub fn penalty(self) -> Penalty {
        match self {
            Self::ConCorrRidge | Self::CvRidge => Penalty::Ridge,
            Self::ConCorrLasso | Self::CvLasso => Penalty::Lasso,
        }
    }
}

impl fmt::Display for ExperimentMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// One row of the results table: a single method on a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub run_id: usize,
    pub method: ExperimentMethod,
    pub sigma_a: f64,
    pub sigma_c: f64,
    pub sigma_e: f64,
    pub beta_true: f64,
    pub beta_hat: f64,
    pub err_unreg: f64,
    pub err_method: f64,
    pub lambda_method: f64,
}

pub const RESULTS_HEADER: [&str; 10] = [
    "run_id",
    "method",
    "sigma_a",
    "sigma_c",
    "sigma_e",
    "beta_true",
    "beta_hat",
    "err_unreg",
    "err_method",
    "lambda_method",
];

pub fn write_records<W: Write>(records: &[ExperimentRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(RESULTS_HEADER)?;
    for r in records {
        wtr.write_record([
            r.run_id.to_string(),
            r.method.to_string(),
            r.sigma_a.to_string(),
            r.sigma_c.to_string(),
            r.sigma_e.to_string(),
            r.beta_true.to_string(),
            r.beta_hat.to_string(),
            r.err_unreg.to_string(),
            r.err_method.to_string(),
            r.lambda_method.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a results table, insisting on the exact header.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut rows = rdr.records();
    let header = rows.next().ok_or_else(|| Error::Schema("results file is empty".into()))??;
    if header.iter().ne(RESULTS_HEADER) {
        return Err(Error::Schema(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for (line, row) in rows.enumerate() {
        let row = row?;
        if row.len() != RESULTS_HEADER.len() {
            return Err(Error::Schema(format!("row {} has {} fields", line + 1, row.len())));
        }
        let num = |k: usize| -> Result<f64> {
            row[k].parse().map_err(|_| Error::Schema(format!("row {}: bad number `{}`", line + 1, &row[k])))
        };
        out.push(ExperimentRecord {
            run_id: row[0].parse().map_err(|_| Error::Schema(format!("row {}: bad run id", line + 1)))?,
            method: row[1].parse().map_err(|_| Error::Schema(format!("row {}: bad method", line + 1)))?,
            sigma_a: num(2)?,
            sigma_c: num(3)?,
            sigma_e: num(4)?,
            beta_true: num(5)?,
            beta_hat: num(6)?,
            err_unreg: num(7)?,
            err_method: num(8)?,
            lambda_method: num(9)?,
        });
    }
    if out.is_empty() {
        return Err(Error::Schema("results file has no records".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub success: f64,
    pub failure: f64,
    pub count: usize,
}

/// Success: error at least `margin` below both the unregularized error and
/// the trivial 1/2. Failure: error more than `margin` above either of them.
pub fn success_failure_rates(records: &[ExperimentRecord], margin: f64, method: ExperimentMethod) -> Result<Rates> {
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument("margin must be positive".into()));
    }
    let selected: Vec<&ExperimentRecord> = records.iter().filter(|r| r.method == method).collect();
    if selected.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let count = selected.len();
    let success = selected.iter().filter(|r| r.err_method <= r.err_unreg.min(0.5) - margin).count();
    let failure = selected
        .iter()
        .filter(|r| r.err_method > r.err_unreg + margin || r.err_method > 0.5 + margin)
        .count();
    Ok(Rates { success: success as f64 / count as f64, failure: failure as f64 / count as f64, count })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Unconfounded finite-sample regression.
    One,
    /// Confounded regression.
    Two,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub d: usize,
    /// Number of sources. In scenario 1 the predictors are still mixed from
    /// `ell` independent sources (without confounding); `None` there means
    /// isotropic predictors.
    pub ell: Option<usize>,
    pub n: usize,
    pub runs: usize,
    pub methods: Vec<ExperimentMethod>,
    pub margin: f64,
    pub seed: u64,
    pub ranges: ParameterRanges,
    pub normalize: bool,
    pub cv_grid_points: usize,
    pub lasso_folds: usize,
    pub solver: SolverConfig,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, d: usize, ell: Option<usize>, n: usize, runs: usize, seed: u64) -> Self {
        Self {
            scenario,
            d,
            ell,
            n,
            runs,
            methods: ExperimentMethod::ALL.to_vec(),
            margin: 0.05,
            seed,
            ranges: ParameterRanges::default(),
            normalize: false,
            cv_grid_points: DEFAULT_GRID_POINTS,
            lasso_folds: 10,
            solver: SolverConfig::default(),
        }
    }

    /// Draws the instance for `run_id` from its own random stream.
    pub fn instance(&self, run_id: usize) -> Result<SimulatedInstance> {
        let seed = substream_seed(self.seed, run_id);
        match self.scenario {
            Scenario::One => {
                gen_scenario1(self.d, self.n, self.ell, self.ranges.sigma_a, self.ranges.sigma_e, seed)
            }
            Scenario::Two => {
                let ell = self.ell.ok_or_else(|| Error::InvalidArgument("scenario 2 needs ell".into()))?;
                gen_scenario2(self.d, ell, self.n, self.ranges, seed)
            }
        }
    }
}

/// Seed of the per-run generator: the first word of stream `run_id`.
fn substream_seed(seed: u64, run_id: usize) -> u64 {
    use rand::Rng;
    substream(seed, run_id as u64 + 1).random()
}

/// Runs every configured method on `runs` independent instances. Output is
/// ordered by run, then by method, and does not depend on thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    if config.runs == 0 {
        return Err(Error::InvalidArgument("runs must be at least 1".into()));
    }
    config.solver.validate()?;
    let per_run: Vec<Vec<ExperimentRecord>> =
        (0..config.runs).into_par_iter().map(|run_id| run_once(config, run_id)).collect::<Result<_>>()?;
    Ok(per_run.into_iter().flatten().collect())
}

fn run_once(config: &ExperimentConfig, run_id: usize) -> Result<Vec<ExperimentRecord>> {
    let instance = config.instance(run_id)?;
    let data = &instance.data;
    let truth = &instance.scm.a;
    let cov = empirical_covariances(&center_and_scale(data, config.normalize)?)?;
    let cfg = &config.solver;
    let ols = ols_from_cov(&cov, cfg)?;
    let err_unreg = relative_squared_error(&ols.coefficients, truth);
    let grid = default_lambda_grid(&cov, config.cv_grid_points);

    let mut beta_hat = None;
    let mut rows = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let (coefficients, lambda) = match method {
            ExperimentMethod::ConCorrRidge | ExperimentMethod::ConCorrLasso => {
                let r = concorr_from_cov(&cov, method.penalty(), cfg)?;
                beta_hat = Some(r.beta_hat);
                (r.vector.coefficients, r.lambda)
            }
            ExperimentMethod::CvRidge => {
                let fit = cv_baseline_fit(data, Penalty::Ridge, Folds::LeaveOneOut, &grid, config.normalize, cfg)?;
                (fit.vector.coefficients, fit.lambda)
            }
            ExperimentMethod::CvLasso => {
                let folds = Folds::K(config.lasso_folds.min(data.n_samples()));
                let fit = cv_baseline_fit(data, Penalty::Lasso, folds, &grid, config.normalize, cfg)?;
                (fit.vector.coefficients, fit.lambda)
            }
        };
        rows.push((method, relative_squared_error(&coefficients, truth), lambda));
    }
    let beta_hat = match beta_hat {
        Some(b) => b,
        None => crate::confounding::estimate_confounding_strength(
            &cov.sxx,
            &ols.coefficients,
            crate::confounding::DEFAULT_RTOL,
        )?
        .beta_hat,
    };
    let scm = &instance.scm;
    Ok(rows
        .into_iter()
        .map(|(method, err_method, lambda_method)| ExperimentRecord {
            run_id,
            method,
            sigma_a: scm.sigma_a,
            sigma_c: scm.sigma_c,
            sigma_e: scm.sigma_e,
            beta_true: instance.beta_true,
            beta_hat,
            err_unreg,
            err_method,
            lambda_method,
        })
        .collect())
}
