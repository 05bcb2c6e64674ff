//! Confounding strength from the spectral signature of the regression vector.
//!
//! The unregularized vector is modeled as `â ~ N(0, σ_a²·I + σ_c²·Σ_XX⁻¹)`.
//! In the eigenbasis of `Σ_XX` its coordinates are independent with variance
//! `σ_a² + σ_c²/λ_j`, so mass in small-eigenvalue directions points to
//! confounding. Both variances are fitted by maximum likelihood and turned
//! into `β̂ = σ_c²·Σλ_j⁻¹ / (σ_c²·Σλ_j⁻¹ + σ_a²·k)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_RTOL: f64 = 1e-10;

/// Spectra with `max λ / min λ` below this are treated as isotropic.
const ISOTROPY_RATIO: f64 = 1.01;
const GRID_POINTS: usize = 257;
const LOGIT_SPAN: f64 = 60.0;
const REFINE_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfoundingEstimate {
    pub sigma_a_sq: f64,
    pub sigma_c_sq: f64,
    pub beta_hat: f64,
    pub log_likelihood: f64,
    /// The spectrum is nearly isotropic, so causal and confounding variance
    /// cannot be told apart; `beta_hat` is 0 by convention.
    pub degenerate: bool,
}

/// Gaussian log-likelihood (up to the `2π` constant) of the projected
/// coordinates `v_j` under variances `σ_a² + σ_c²/λ_j`.
pub fn spectral_log_likelihood(eigenvalues: &[f64], projected: &[f64], sigma_a_sq: f64, sigma_c_sq: f64) -> f64 {
    eigenvalues
        .iter()
        .zip(projected)
        .map(|(&ev, &v)| {
            let var = sigma_a_sq + sigma_c_sq / ev;
            -0.5 * var.ln() - v * v / (2.0 * var)
        })
        .sum()
}

pub fn estimate_confounding_strength(sxx: &DMatrix<f64>, a_hat: &DVector<f64>, rtol: f64) -> Result<ConfoundingEstimate> {
    let d = a_hat.len();
    if sxx.nrows() != d || sxx.ncols() != d {
        return Err(Error::DimensionMismatch(format!("sxx is {}x{}, a_hat has {d}", sxx.nrows(), sxx.ncols())));
    }
    if d < 2 {
        return Err(Error::InvalidArgument("confounding estimation needs d >= 2".into()));
    }
    if a_hat.iter().chain(sxx.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let eig = SymmetricEigen::new(crate::data::symmetrize(sxx.clone()));
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        return Err(Error::AllEigenvaluesTruncated);
    }
    let cutoff = rtol * max;
    let projected_all = eig.eigenvectors.transpose() * a_hat;
    let (eigenvalues, projected): (Vec<f64>, Vec<f64>) = eig
        .eigenvalues
        .iter()
        .zip(projected_all.iter())
        .filter(|(&ev, _)| ev > cutoff)
        .map(|(&ev, &v)| (ev, v))
        .unzip();
    if eigenvalues.is_empty() {
        return Err(Error::AllEigenvaluesTruncated);
    }
    let k = eigenvalues.len() as f64;
    let inv_sum: f64 = eigenvalues.iter().map(|ev| 1.0 / ev).sum();
    let energy: f64 = projected.iter().map(|v| v * v).sum();

    if energy == 0.0 {
        return Ok(ConfoundingEstimate {
            sigma_a_sq: 0.0,
            sigma_c_sq: 0.0,
            beta_hat: 0.0,
            log_likelihood: 0.0,
            degenerate: false,
        });
    }

    let min = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let top = eigenvalues.iter().cloned().fold(0.0, f64::max);
    if top / min < ISOTROPY_RATIO {
        let sigma_a_sq = energy / k;
        let log_likelihood = spectral_log_likelihood(&eigenvalues, &projected, sigma_a_sq, 0.0);
        return Ok(ConfoundingEstimate { sigma_a_sq, sigma_c_sq: 0.0, beta_hat: 0.0, log_likelihood, degenerate: true });
    }

    let profile = Profile::new(&eigenvalues, &projected);
    let t = profile.maximize();
    let (sigma_a_sq, sigma_c_sq) = profile.variances(t);
    let log_likelihood = spectral_log_likelihood(&eigenvalues, &projected, sigma_a_sq, sigma_c_sq);
    if !log_likelihood.is_finite() {
        return Err(Error::NonFiniteLikelihood);
    }
    let confounded = sigma_c_sq * inv_sum;
    let denom = confounded + sigma_a_sq * k;
    let beta_hat = if denom > 0.0 { (confounded / denom).clamp(0.0, 1.0) } else { 0.0 };
    Ok(ConfoundingEstimate { sigma_a_sq, sigma_c_sq, beta_hat, log_likelihood, degenerate: false })
}

/// Likelihood profiled over the overall scale. With `σ_a² = τ(1−t)` and
/// `σ_c² = τ·t·κ` (κ the geometric mean eigenvalue) the optimal `τ` has a
/// closed form, leaving a one-dimensional search over the mixing weight
/// `t ∈ [0, 1]`, which includes both boundary solutions.
struct Profile<'a> {
    eigenvalues: &'a [f64],
    projected: &'a [f64],
    kappa: f64,
}

impl<'a> Profile<'a> {
    fn new(eigenvalues: &'a [f64], projected: &'a [f64]) -> Self {
        let log_mean = eigenvalues.iter().map(|ev| ev.ln()).sum::<f64>() / eigenvalues.len() as f64;
        Self { eigenvalues, projected, kappa: log_mean.exp() }
    }

    fn shape(&self, t: f64, ev: f64) -> f64 {
        (1.0 - t) + t * self.kappa / ev
    }

    fn scale(&self, t: f64) -> f64 {
        let k = self.eigenvalues.len() as f64;
        self.eigenvalues
            .iter()
            .zip(self.projected)
            .map(|(&ev, &v)| v * v / self.shape(t, ev))
            .sum::<f64>()
            / k
    }

    fn value(&self, t: f64) -> f64 {
        let k = self.eigenvalues.len() as f64;
        let tau = self.scale(t);
        let log_shape: f64 = self.eigenvalues.iter().map(|&ev| self.shape(t, ev).ln()).sum();
        -0.5 * log_shape - 0.5 * k * tau.ln() - 0.5 * k
    }

    fn variances(&self, t: f64) -> (f64, f64) {
        let tau = self.scale(t);
        (tau * (1.0 - t), tau * t * self.kappa)
    }

    fn maximize(&self) -> f64 {
        let logistic = |u: f64| 1.0 / (1.0 + (-u).exp());
        let by_u = |u: f64| self.value(logistic(u));
        let step = 2.0 * LOGIT_SPAN / (GRID_POINTS - 1) as f64;
        let grid: Vec<f64> = (0..GRID_POINTS).map(|i| -LOGIT_SPAN + i as f64 * step).collect();
        let values: Vec<f64> = grid.iter().map(|&u| by_u(u)).collect();
        let mut best = 0;
        for i in 1..values.len() {
            if values[i] > values[best] {
                best = i;
            }
        }
        let lo = grid[best.saturating_sub(1)];
        let hi = grid[(best + 1).min(GRID_POINTS - 1)];
        let u = golden_section_max(by_u, lo, hi);
        let mut t = logistic(u);
        let mut best_value = self.value(t);
        for edge in [0.0, 1.0] {
            let v = self.value(edge);
            if v >= best_value {
                best_value = v;
                t = edge;
            }
        }
        t
    }
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while (hi - lo) > REFINE_RTOL * (1.0 + lo.abs().max(hi.abs())) {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// Squared length expected for the causal vector: `(1 − β̂)·‖â‖²`.
pub fn causal_norm_target(estimate: &ConfoundingEstimate, a_hat: &DVector<f64>) -> f64 {
    (1.0 - estimate.beta_hat) * a_hat.norm_squared()
}

/// Confounding strength `‖ã − a‖² / (‖ã − a‖² + ‖a‖²)`; zero when both vanish.
pub fn confounding_strength(a_tilde: &DVector<f64>, a: &DVector<f64>) -> f64 {
    let dev = (a_tilde - a).norm_squared();
    let denom = dev + a.norm_squared();
    if denom == 0.0 {
        0.0
    } else {
        dev / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, normal_vector, substream};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = normal_matrix(rng, d, d);
        m.transpose() * m
    }

    #[test]
    fn zero_vector_gives_zero_strength() {
        let mut rng = substream(1, 0);
        let est = estimate_confounding_strength(&random_spd(5, &mut rng), &DVector::zeros(5), DEFAULT_RTOL).unwrap();
        assert_eq!(est.beta_hat, 0.0);
        assert_eq!(est.sigma_a_sq, 0.0);
        assert_eq!(est.sigma_c_sq, 0.0);
    }

    #[test]
    fn isotropic_spectrum_is_flagged() {
        let a = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let est = estimate_confounding_strength(&DMatrix::identity(3, 3), &a, DEFAULT_RTOL).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.beta_hat, 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let a = DVector::from_row_slice(&[1.0, 2.0]);
        assert!(matches!(
            estimate_confounding_strength(&DMatrix::zeros(2, 2), &a, DEFAULT_RTOL),
            Err(Error::AllEigenvaluesTruncated)
        ));
        assert!(estimate_confounding_strength(&DMatrix::identity(1, 1), &DVector::from_element(1, 1.0), DEFAULT_RTOL)
            .is_err());
    }

    #[test]
    fn norm_target_arithmetic() {
        let a = DVector::from_row_slice(&[1.5, 0.5]);
        let mut est = ConfoundingEstimate {
            sigma_a_sq: 1.0,
            sigma_c_sq: 0.0,
            beta_hat: 0.0,
            log_likelihood: 0.0,
            degenerate: false,
        };
        assert_eq!(causal_norm_target(&est, &a), 2.5);
        est.beta_hat = 1.0;
        assert_eq!(causal_norm_target(&est, &a), 0.0);
        est.beta_hat = 0.8;
        assert!((causal_norm_target(&est, &a) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = substream(3, 0);
        let sxx = random_spd(8, &mut rng);
        let a = normal_vector(&mut rng, 8, 1.0);
        let base = estimate_confounding_strength(&sxx, &a, DEFAULT_RTOL).unwrap();
        let s = 7.5;
        let scaled = estimate_confounding_strength(&sxx, &(&a * s), DEFAULT_RTOL).unwrap();
        assert!((scaled.beta_hat - base.beta_hat).abs() < 1e-6);
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-300);
        if base.sigma_a_sq > 0.0 {
            assert!(rel(scaled.sigma_a_sq, s * s * base.sigma_a_sq) < 1e-5);
        }
        if base.sigma_c_sq > 0.0 {
            assert!(rel(scaled.sigma_c_sq, s * s * base.sigma_c_sq) < 1e-5);
        }
    }

    #[test]
    fn grid_neighbours_are_not_better() {
        let mut rng = substream(4, 0);
        for _ in 0..20 {
            let sxx = random_spd(10, &mut rng);
            let a = normal_vector(&mut rng, 10, 1.0);
            let est = estimate_confounding_strength(&sxx, &a, DEFAULT_RTOL).unwrap();
            let eig = SymmetricEigen::new(sxx.clone());
            let v = eig.eigenvectors.transpose() * &a;
            let evs: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
            let vs: Vec<f64> = v.iter().cloned().collect();
            let best = spectral_log_likelihood(&evs, &vs, est.sigma_a_sq, est.sigma_c_sq);
            for fa in [0.95, 1.0, 1.05] {
                for fc in [0.95, 1.0, 1.05] {
                    let ll = spectral_log_likelihood(&evs, &vs, est.sigma_a_sq * fa, est.sigma_c_sq * fc);
                    assert!(ll <= best + 1e-9 * best.abs().max(1.0), "neighbour ({fa},{fc}) better");
                }
            }
        }
    }

    #[test]
    fn mass_in_small_eigendirections_raises_strength() {
        let mut rng = substream(5, 0);
        for _ in 0..10 {
            let sxx = random_spd(6, &mut rng);
            let eig = SymmetricEigen::new(sxx.clone());
            let (imax, _) = eig.eigenvalues.argmax();
            let (imin, _) = eig.eigenvalues.argmin();
            assert!(eig.eigenvalues[imax] / eig.eigenvalues[imin] > 10.0);
            let top = eig.eigenvectors.column(imax).into_owned();
            let bottom = eig.eigenvectors.column(imin).into_owned();
            let mut previous = -1.0;
            for step in 0..=10 {
                let angle = std::f64::consts::FRAC_PI_2 * step as f64 / 10.0;
                let a = &top * angle.cos() + &bottom * angle.sin();
                let beta = estimate_confounding_strength(&sxx, &a, DEFAULT_RTOL).unwrap().beta_hat;
                assert!(beta >= previous - 1e-9, "step {step}: {beta} < {previous}");
                previous = beta;
            }
            assert!(previous > 0.5);
        }
    }
}
