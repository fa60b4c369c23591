//! Spline-linear mediator regression: ordinary least squares of the
//! mediator on an exposure spline plus the shared confounder block, with a
//! closed-form counterfactual mean and parametric-bootstrap coefficient
//! draws.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::basis::{build_confounder_matrix, DesignMatrix, DesignRole, DesignSpec};
use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::glm::{sample_mvn_draws, CoefficientDraws};
use crate::linalg::{dot, pivoted_qr_diag, qr_least_squares, rtr_inverse, Mat};

/// OLS fit of the mediator model; `beta` has the intercept at index 0
/// followed by one coefficient per design column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMediatorFit {
    pub beta: Vec<f64>,
    pub cov_beta: Mat,
    /// Residual variance, RSS / (T - p).
    pub sigma2: f64,
    pub spec: DesignSpec,
}

impl LinearMediatorFit {
    pub fn n_coef(&self) -> usize {
        self.beta.len()
    }

    /// Exposure-spline block of a coefficient vector in this fit's layout.
    fn temp_block<'a>(&self, beta: &'a [f64]) -> &'a [f64] {
        let r = self.spec.layout.temperature.clone();
        &beta[r.start + 1..r.end + 1]
    }

    fn conf_block<'a>(&self, beta: &'a [f64]) -> &'a [f64] {
        let r = self.spec.layout.confounders.clone();
        &beta[r.start + 1..r.end + 1]
    }
}

fn ols(z: &Mat, m: &[f64], names: &[String]) -> Result<(Vec<f64>, Mat, f64)> {
    let t = z.nrows();
    if m.len() != t {
        return Err(Error::Dimension(format!(
            "{} rows but {} responses",
            t,
            m.len()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("mediator values must be finite"));
    }
    let p = z.ncols() + 1;
    if t <= p {
        return Err(Error::DegreesOfFreedom(format!(
            "{t} rows cannot identify {p} coefficients plus a residual variance"
        )));
    }
    let mut full = Mat::zeros(t, p);
    for i in 0..t {
        full[(i, 0)] = 1.0;
        full.row_mut(i)[1..].copy_from_slice(z.row(i));
    }
    // Rank check mirrors the GLM fitter.
    let piv = pivoted_qr_diag(&full);
    let tol = 1e-10 * full.frob_norm();
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
                    .unwrap_or_else(|| format!("col{col}"))
            }
        })
        .collect();
    if !deficient.is_empty() {
        return Err(Error::SingularDesign { columns: deficient });
    }
    let (beta, r) = qr_least_squares(&full, m)?;
    let fitted = full.matvec(&beta);
    let rss: f64 = m
        .iter()
        .zip(&fitted)
        .map(|(y, f)| (y - f) * (y - f))
        .sum();
    let sigma2 = rss / (t - p) as f64;
    let unscaled = rtr_inverse(&r)?;
    let cov = Mat::from_fn(p, p, |i, j| sigma2 * unscaled[(i, j)]);
    Ok((beta, cov, sigma2))
}

/// Fit the spline-linear mediator regression.
pub fn fit_linear_mediator(design: &DesignMatrix, m: &[f64]) -> Result<LinearMediatorFit> {
    if design.spec.role != DesignRole::MediatorSpline {
        return Err(Error::argument("design role must be mediator-spline"));
    }
    let (beta, cov_beta, sigma2) = ols(&design.values, m, &design.spec.column_names)?;
    Ok(LinearMediatorFit {
        beta,
        cov_beta,
        sigma2,
        spec: design.spec.clone(),
    })
}

/// Closed-form counterfactual mediator mean per day:
/// beta0 + g(x_star) . beta1 + beta2 . C_t. Uses `beta_draw` when supplied,
/// otherwise the point estimate; knots stay frozen from fitting.
pub fn predict_mediator_mean(
    fit: &LinearMediatorFit,
    beta_draw: Option<&[f64]>,
    x_star: f64,
    ds: &TimeSeriesDataset,
) -> Result<Vec<f64>> {
    if !x_star.is_finite() {
        return Err(Error::argument("exposure value must be finite"));
    }
    let beta = beta_draw.unwrap_or(&fit.beta);
    if beta.len() != fit.beta.len() {
        return Err(Error::Dimension("coefficient draw length mismatch".into()));
    }
    let basis_row = fit.spec.temperature_basis().evaluate(x_star);
    let gx = dot(&basis_row, fit.temp_block(beta));
    let conf = build_confounder_matrix(ds, &fit.spec)?;
    let conf_effect = conf.matvec(fit.conf_block(beta));
    Ok(conf_effect
        .into_iter()
        .map(|c| beta[0] + gx + c)
        .collect())
}

/// Parametric-bootstrap draws beta ~ MVN(beta_hat, cov_beta); the residual
/// variance stays fixed at its point estimate.
pub fn sample_mediator_coefficients(
    fit: &LinearMediatorFit,
    k: usize,
    seed: u64,
) -> Result<CoefficientDraws> {
    sample_mvn_draws(&fit.beta, &fit.cov_beta, k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_mediator_design, SplineDfs};
    use crate::math;
    use crate::data::{synthesize_dataset, SynthParams};
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn dataset() -> TimeSeriesDataset {
        synthesize_dataset(2208, 9, &SynthParams::default()).unwrap()
    }

    fn spline_design(ds: &TimeSeriesDataset) -> DesignMatrix {
        let spec = DesignSpec::mediator_spline(ds, SplineDfs::default()).unwrap();
        build_mediator_design(ds, &spec).unwrap()
    }

    #[test]
    fn exact_interpolation_when_noiseless() {
        let ds = dataset();
        let design = spline_design(&ds);
        let p = design.ncols() + 1;
        let mut beta_true = vec![0.0; p];
        beta_true[0] = 0.05;
        beta_true[1] = 0.002;
        beta_true[10] = -0.001;
        let m: Vec<f64> = (0..design.nrows())
            .map(|i| {
                let row = design.values.row(i);
                beta_true[0]
                    + row
                        .iter()
                        .zip(&beta_true[1..])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let fit = fit_linear_mediator(&design, &m).unwrap();
        assert!(fit.sigma2 < 1e-12, "sigma2 {}", fit.sigma2);
        let pred = predict_mediator_mean(&fit, None, ds.rows[17].x, &ds).unwrap();
        assert_eq!(pred.len(), ds.len());
        for (b, bt) in fit.beta.iter().zip(&beta_true) {
            assert!((b - bt).abs() < 1e-7);
        }
    }

    /// Residual variance recovery at a realistic ozone noise scale.
    #[test]
    fn sigma2_recovery_at_ozone_scale() {
        let ds = dataset();
        let design = spline_design(&ds);
        let mut rng = substream(14, 0);
        let m: Vec<f64> = (0..design.nrows())
            .map(|i| {
                let row = design.values.row(i);
                0.048 + 0.001 * row[0] + 0.009 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let fit = fit_linear_mediator(&design, &m).unwrap();
        let target = 8.1e-5; // 0.009^2
        assert!(
            (fit.sigma2 - target).abs() < 0.10 * target,
            "sigma2 {} vs {target}",
            fit.sigma2
        );
    }

    #[test]
    fn degrees_of_freedom_error_when_saturated() {
        let z = Mat::from_fn(4, 3, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let m = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            ols(&z, &m, &[]),
            Err(Error::DegreesOfFreedom(_))
        ));
    }

    #[test]
    fn zero_slopes_give_constant_prediction() {
        let ds = dataset();
        let design = spline_design(&ds);
        let m = ds.mediators();
        let fit = fit_linear_mediator(&design, &m).unwrap();
        let mut beta = vec![0.0; fit.n_coef()];
        beta[0] = 0.123;
        let pred = predict_mediator_mean(&fit, Some(&beta), 30.0, &ds).unwrap();
        for v in pred {
            assert!((v - 0.123).abs() < 1e-15);
        }
    }

    /// Design-matrix route as an independent oracle for the closed form.
    #[test]
    fn closed_form_matches_design_route() {
        let ds = dataset();
        let design = spline_design(&ds);
        let m = ds.mediators();
        let fit = fit_linear_mediator(&design, &m).unwrap();
        for x_star in [22.0, 29.0, 35.5] {
            let direct = predict_mediator_mean(&fit, None, x_star, &ds).unwrap();
            // Oracle: rebuild the design with every exposure overridden.
            let mut ds_override = ds.clone();
            for r in &mut ds_override.rows {
                r.x = x_star;
            }
            let design_o = build_mediator_design(&ds_override, &fit.spec).unwrap();
            for i in 0..ds.len() {
                let row = design_o.values.row(i);
                let oracle = fit.beta[0]
                    + row
                        .iter()
                        .zip(&fit.beta[1..])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                assert!(
                    (direct[i] - oracle).abs() < 1e-12,
                    "day {i} at {x_star}: {} vs {oracle}",
                    direct[i]
                );
            }
        }
        // Same evaluation point twice gives identical vectors.
        let a = predict_mediator_mean(&fit, None, 28.0, &ds).unwrap();
        let b = predict_mediator_mean(&fit, None, 28.0, &ds).unwrap();
        assert_eq!(a, b);
    }

    /// With an intercept, OLS residuals are orthogonal to constants: the
    /// fitted means at observed exposures average to the sample mean.
    #[test]
    fn fitted_mean_matches_sample_mean() {
        let ds = dataset();
        let design = spline_design(&ds);
        let m = ds.mediators();
        let fit = fit_linear_mediator(&design, &m).unwrap();
        let mut full = Mat::zeros(design.nrows(), fit.n_coef());
        for i in 0..design.nrows() {
            full[(i, 0)] = 1.0;
            full.row_mut(i)[1..].copy_from_slice(design.values.row(i));
        }
        let fitted = full.matvec(&fit.beta);
        let diff = math::mean(&fitted) - math::mean(&m);
        assert!(diff.abs() < 1e-10, "mean gap {diff}");
    }

    /// Affine transforms of a confounder column leave fitted means alone.
    #[test]
    fn affine_confounder_invariance() {
        let ds = dataset();
        let design = spline_design(&ds);
        let m = ds.mediators();
        let fit = fit_linear_mediator(&design, &m).unwrap();
        let mut shifted = design.clone();
        let col = design.spec.layout.confounders.start;
        for i in 0..shifted.nrows() {
            shifted.values[(i, col)] = 3.0 * shifted.values[(i, col)] + 0.7;
        }
        let fit2 = fit_linear_mediator(&shifted, &m).unwrap();
        let fitted = |f: &LinearMediatorFit, d: &DesignMatrix| -> Vec<f64> {
            (0..d.nrows())
                .map(|i| {
                    f.beta[0]
                        + d.values
                            .row(i)
                            .iter()
                            .zip(&f.beta[1..])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect()
        };
        let f1 = fitted(&fit, &design);
        let f2 = fitted(&fit2, &shifted);
        for i in 0..f1.len() {
            assert!((f1[i] - f2[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn coefficient_draws_recover_moments() {
        let ds = dataset();
        let design = spline_design(&ds);
        let m = ds.mediators();
        let fit = fit_linear_mediator(&design, &m).unwrap();
        let k = 20_000;
        let draws = sample_mediator_coefficients(&fit, k, 4).unwrap();
        let again = sample_mediator_coefficients(&fit, k, 4).unwrap();
        assert_eq!(draws.draws, again.draws);
        // Spot-check mean recovery on a few coefficients.
        for j in [0usize, 1, 5, 20] {
            let col: Vec<f64> = (0..k).map(|i| draws.draws[(i, j)]).collect();
            let bound = 5.0 * math::sqrt(fit.cov_beta[(j, j)] / k as f64);
            assert!((math::mean(&col) - fit.beta[j]).abs() < bound, "coef {j}");
        }
    }
}
