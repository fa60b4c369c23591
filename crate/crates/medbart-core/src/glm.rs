//! Quasi-Poisson log-linear outcome regression fitted by iteratively
//! reweighted least squares, with multivariate-normal coefficient sampling
//! from the asymptotic distribution.
//!
//! The design matrix carries named regressors only; the fitter prepends the
//! intercept, so coefficient vectors have length `design columns + 1` with
//! the intercept at index 0.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::basis::{DesignMatrix, DesignSpec};
use crate::error::{Error, Result};
use crate::linalg::{pivoted_qr_diag, qr_least_squares, rtr_inverse, Mat, MvnSampler};
use crate::math;
use crate::rng;

const MAX_ITER: usize = 100;
const DEV_TOL: f64 = 1e-9;
const ETA_CLAMP: f64 = 100.0;
const WEIGHT_FLOOR: f64 = 1e-10;

/// IRLS output on a plain matrix, before any design-spec bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGlmFit {
    /// Intercept first, then one coefficient per design column.
    pub theta: Vec<f64>,
    /// phi * (X^T W X)^{-1} at convergence.
    pub cov: Mat,
    /// Pearson chi-squared over residual degrees of freedom.
    pub dispersion: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Deviance after each accepted IRLS step (non-increasing).
    pub deviance_trace: Vec<f64>,
    /// Max absolute score component at the final estimate.
    pub score_inf: f64,
    pub warnings: Vec<String>,
}

/// Fitted outcome regression: coefficients, covariance, dispersion, and the
/// frozen design spec used to build counterfactual predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFit {
    pub raw: RawGlmFit,
    pub spec: DesignSpec,
}

impl OutcomeFit {
    pub fn theta(&self) -> &[f64] {
        &self.raw.theta
    }

    pub fn converged(&self) -> bool {
        self.raw.converged
    }

    pub fn dispersion(&self) -> f64 {
        self.raw.dispersion
    }

    /// Number of fitted coefficients (intercept included).
    pub fn n_coef(&self) -> usize {
        self.raw.theta.len()
    }
}

/// Coefficient block offsets of a parameter vector laid out as
/// [intercept | design columns], resolved through a design spec.
pub mod blocks {
    use super::DesignSpec;

    pub fn intercept(theta: &[f64]) -> f64 {
        theta[0]
    }

    pub fn temperature<'a>(theta: &'a [f64], spec: &DesignSpec) -> &'a [f64] {
        let r = spec.layout.temperature.clone();
        &theta[r.start + 1..r.end + 1]
    }

    pub fn mediator(theta: &[f64], spec: &DesignSpec) -> f64 {
        theta[spec.layout.mediator.expect("no mediator column") + 1]
    }

    /// Quartile-interaction coefficients (quartiles 2..4).
    pub fn interactions<'a>(theta: &'a [f64], spec: &DesignSpec) -> &'a [f64] {
        let r = spec.layout.interactions.clone().expect("no interactions");
        &theta[r.start + 1..r.end + 1]
    }

    pub fn confounders<'a>(theta: &'a [f64], spec: &DesignSpec) -> &'a [f64] {
        let r = spec.layout.confounders.clone();
        &theta[r.start + 1..r.end + 1]
    }
}

/// Posterior-style draws from the asymptotic coefficient distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDraws {
    /// K x p, one draw per row.
    pub draws: Mat,
    pub seed: u64,
    /// Total magnitude of negative eigenvalues clipped during
    /// factorization of the covariance.
    pub clipped: f64,
}

fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    let mut dev = 0.0;
    for i in 0..y.len() {
        let yi = y[i];
        let mui = mu[i];
        if yi > 0.0 {
            dev += yi * math::ln(yi / mui) - (yi - mui);
        } else {
            dev += mui;
        }
    }
    2.0 * dev
}

fn intercept_design(x: &Mat) -> Mat {
    let t = x.nrows();
    let p = x.ncols();
    let mut full = Mat::zeros(t, p + 1);
    for i in 0..t {
        full[(i, 0)] = 1.0;
        full.row_mut(i)[1..].copy_from_slice(x.row(i));
    }
    full
}

fn linear_predictor(x_full: &Mat, theta: &[f64]) -> Vec<f64> {
    x_full
        .matvec(theta)
        .into_iter()
        .map(|e| e.clamp(-ETA_CLAMP, ETA_CLAMP))
        .collect()
}

/// Rank check on the intercept-augmented design; offending column names on
/// failure. `names` covers the design columns (no intercept).
fn check_rank(x_full: &Mat, names: &[String]) -> Result<()> {
    let piv = pivoted_qr_diag(x_full);
    let tol = 1e-10 * x_full.frob_norm();
    let deficient: Vec<String> = piv
        .r_diag
        .iter()
        .zip(&piv.pivots)
        .filter(|(d, _)| **d <= tol)
        .map(|(_, col)| {
            if *col == 0 {
                String::from("(intercept)")
            } else {
                names
                    .get(col - 1)
                    .cloned()
                    .unwrap_or_else(|| format!("col{}", col))
            }
        })
        .collect();
    if deficient.is_empty() {
        Ok(())
    } else {
        Err(Error::SingularDesign { columns: deficient })
    }
}

/// Quasi-Poisson IRLS on a plain design matrix (intercept prepended
/// internally; pass a zero-column matrix for an intercept-only fit).
pub fn fit_quasipoisson_raw(x: &Mat, y: &[f64], names: &[String]) -> Result<RawGlmFit> {
    let t = x.nrows();
    if y.len() != t {
        return Err(Error::Dimension(format!(
            "{} rows but {} responses",
            t,
            y.len()
        )));
    }
    if t == 0 {
        return Err(Error::argument("empty design"));
    }
    for (i, &yi) in y.iter().enumerate() {
        if !yi.is_finite() || yi < 0.0 || libm::floor(yi) != yi {
            return Err(Error::argument(format!(
                "response at row {i} is not a non-negative integer: {yi}"
            )));
        }
    }
    let p = x.ncols() + 1;
    if t <= p {
        return Err(Error::DegreesOfFreedom(format!(
            "{t} rows cannot identify {p} coefficients plus dispersion"
        )));
    }
    let x_full = intercept_design(x);
    check_rank(&x_full, names)?;

    let ybar = math::mean(y);
    let mut theta = vec![0.0; p];
    theta[0] = math::ln(ybar + 0.5);
    let mut eta = linear_predictor(&x_full, &theta);
    let mut mu: Vec<f64> = eta.iter().map(|e| math::exp(*e)).collect();
    let mut deviance = poisson_deviance(y, &mu);
    let mut trace = vec![deviance];
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=MAX_ITER {
        iterations = iter;
        // Working response and weights for the log link.
        let mut a = Mat::zeros(t, p);
        let mut b = vec![0.0; t];
        for i in 0..t {
            let w = mu[i].max(WEIGHT_FLOOR);
            let sw = math::sqrt(w);
            let z = eta[i] + (y[i] - mu[i]) / w;
            let row = a.row_mut(i);
            for j in 0..p {
                row[j] = sw * x_full[(i, j)];
            }
            b[i] = sw * z;
        }
        let (proposal, _) = qr_least_squares(&a, &b)?;
        // Step-halving keeps the deviance non-increasing.
        let mut candidate = proposal;
        let mut accepted = false;
        for _ in 0..30 {
            let eta_c = linear_predictor(&x_full, &candidate);
            let mu_c: Vec<f64> = eta_c.iter().map(|e| math::exp(*e)).collect();
            let dev_c = poisson_deviance(y, &mu_c);
            if dev_c.is_finite() && dev_c <= deviance + 1e-8 * (math::abs(deviance) + 1.0) {
                let dev_change = math::abs(deviance - dev_c) / (math::abs(dev_c) + 0.1);
                theta = candidate;
                eta = eta_c;
                mu = mu_c;
                deviance = dev_c;
                trace.push(deviance);
                accepted = true;
                if dev_change < DEV_TOL {
                    converged = true;
                }
                break;
            }
            for j in 0..p {
                candidate[j] = 0.5 * (candidate[j] + theta[j]);
            }
        }
        if !accepted {
            warnings.push(format!("step-halving failed to reduce deviance at iteration {iter}"));
            break;
        }
        if converged {
            break;
        }
    }
    if !converged {
        warnings.push(format!(
            "IRLS did not converge within {MAX_ITER} iterations (deviance {deviance:.6e})"
        ));
    }

    // Covariance and dispersion at the final estimate.
    let mut a = Mat::zeros(t, p);
    let mut pearson = 0.0;
    let mut score = vec![0.0; p];
    for i in 0..t {
        let w = mu[i].max(WEIGHT_FLOOR);
        let sw = math::sqrt(w);
        let row = a.row_mut(i);
        for j in 0..p {
            row[j] = sw * x_full[(i, j)];
        }
        let resid = y[i] - mu[i];
        pearson += resid * resid / w;
        for j in 0..p {
            score[j] += x_full[(i, j)] * resid;
        }
    }
    let dummy = vec![0.0; t];
    let (_, r) = qr_least_squares(&a, &dummy)?;
    let dispersion = pearson / (t - p) as f64;
    let unscaled = rtr_inverse(&r)?;
    let cov = Mat::from_fn(p, p, |i, j| dispersion * unscaled[(i, j)]);
    let score_inf = score.iter().fold(0.0f64, |acc, s| acc.max(math::abs(*s)));

    Ok(RawGlmFit {
        theta,
        cov,
        dispersion,
        converged,
        iterations,
        deviance_trace: trace,
        score_inf,
        warnings,
    })
}

/// Fit the outcome regression for a built design matrix.
pub fn fit_quasipoisson(design: &DesignMatrix, y: &[f64]) -> Result<OutcomeFit> {
    let raw = fit_quasipoisson_raw(&design.values, y, &design.spec.column_names)?;
    Ok(OutcomeFit {
        raw,
        spec: design.spec.clone(),
    })
}

/// Draw `k` coefficient vectors from MVN(theta_hat, cov). Deterministic in
/// `seed` and shardable: draw `i` uses substream `i`.
pub fn sample_coefficients(fit: &OutcomeFit, k: usize, seed: u64) -> Result<CoefficientDraws> {
    if !fit.raw.converged {
        return Err(Error::argument(
            "refusing to sample from a non-converged fit",
        ));
    }
    sample_mvn_draws(&fit.raw.theta, &fit.raw.cov, k, seed)
}

/// Shared MVN draw matrix builder for coefficient-style sampling.
pub fn sample_mvn_draws(mean: &[f64], cov: &Mat, k: usize, seed: u64) -> Result<CoefficientDraws> {
    if k == 0 {
        return Err(Error::argument("need at least one draw"));
    }
    let sampler = MvnSampler::new(mean.to_vec(), cov)?;
    let p = mean.len();
    let mut draws = Mat::zeros(k, p);
    for i in 0..k {
        let mut stream = rng::substream(seed, i as u64);
        let row = sampler.sample(&mut stream);
        draws.row_mut(i).copy_from_slice(&row);
    }
    Ok(CoefficientDraws {
        draws,
        seed,
        clipped: sampler.clipped,
    })
}
