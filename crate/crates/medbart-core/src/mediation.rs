//! The estimation engine: closed-form nested-counterfactual day means,
//! Bayesian-bootstrap averaging over the empirical confounder distribution,
//! and the five causal effect ratios with 95% percentile intervals.
//!
//! Per draw k the engine samples outcome coefficients, obtains mediator
//! means under the reference and exposed levels, forms the four
//! counterfactual averages F(a, b) with one shared Dirichlet weight vector,
//! and turns their ratios into PNDE/TNDE/PNIE/TNIE/TE draws. Sharing
//! weights and coefficient draws across the four averages makes the ratio
//! identities TE = TNDE x PNIE = PNDE x TNIE hold per draw.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bart::{BartPosterior, PredictiveMode};
use crate::basis::{build_confounder_matrix, quartile_index, DesignSpec};
use crate::data::{DayRecord, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::glm::{blocks, OutcomeFit};
use crate::linalg::{dot, Mat, MvnSampler};
use crate::math;
use crate::mediator_linear::LinearMediatorFit;
use crate::rng;

/// Exposure contrast grid: a reference quantile and the exposed quantiles,
/// resolved against the empirical exposure distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureGrid {
    pub reference_quantile: f64,
    pub exposure_quantiles: Vec<f64>,
    pub reference_value: f64,
    pub resolved_values: Vec<f64>,
}

impl ExposureGrid {
    /// 0.55, 0.60, ..., 0.95 against the median.
    pub fn default_quantiles() -> Vec<f64> {
        vec![0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95]
    }

    pub fn resolve(
        ds: &TimeSeriesDataset,
        reference_quantile: f64,
        exposure_quantiles: &[f64],
    ) -> Result<ExposureGrid> {
        if ds.is_empty() {
            return Err(Error::argument("empty dataset"));
        }
        let all = exposure_quantiles.iter().chain(Some(&reference_quantile));
        for q in all {
            if !(*q > 0.0 && *q < 1.0) {
                return Err(Error::argument(format!("quantile {q} outside (0, 1)")));
            }
        }
        if exposure_quantiles.is_empty() {
            return Err(Error::argument("no exposure quantiles"));
        }
        let mut xs = ds.exposures();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(ExposureGrid {
            reference_quantile,
            exposure_quantiles: exposure_quantiles.to_vec(),
            reference_value: math::quantile_sorted(&xs, reference_quantile),
            resolved_values: exposure_quantiles
                .iter()
                .map(|q| math::quantile_sorted(&xs, *q))
                .collect(),
        })
    }

    pub fn n_levels(&self) -> usize {
        self.exposure_quantiles.len()
    }
}

/// The five natural-effect estimands on the risk-ratio scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimand {
    Pnde,
    Tnde,
    Pnie,
    Tnie,
    Te,
}

impl Estimand {
    pub const ALL: [Estimand; 5] = [
        Estimand::Pnde,
        Estimand::Tnde,
        Estimand::Pnie,
        Estimand::Tnie,
        Estimand::Te,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::Pnde => "PNDE",
            Estimand::Tnde => "TNDE",
            Estimand::Pnie => "PNIE",
            Estimand::Tnie => "TNIE",
            Estimand::Te => "TE",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Estimand::Pnde => 0,
            Estimand::Tnde => 1,
            Estimand::Pnie => 2,
            Estimand::Tnie => 3,
            Estimand::Te => 4,
        }
    }
}

/// Point estimate and percentile interval of one estimand's draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    /// Mean of the ratio draws.
    pub point: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub median: f64,
    pub draws: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub quantile: f64,
    pub exposure_value: f64,
    /// Indexed by `Estimand::index()`.
    pub effects: [EffectSummary; 5],
}

/// Per exposure-level effect table; the Table-2-shaped output surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub reference_quantile: f64,
    pub reference_value: f64,
    pub rows: Vec<EffectRow>,
}

impl EffectTable {
    pub fn summary(&self, level: usize, estimand: Estimand) -> &EffectSummary {
        &self.rows[level].effects[estimand.index()]
    }
}

/// Mediator model handed to the engine.
#[derive(Debug, Clone, Copy)]
pub enum MediatorModel<'a> {
    Bart(&'a BartPosterior),
    Linear(&'a LinearMediatorFit),
}

/// Engine options; defaults are the production choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    /// Mean-function mediator draws plus the analytic variance term
    /// (default), or literal predictive draws with residual noise added.
    pub mediator_draw_mode: PredictiveMode,
    /// One Dirichlet weight vector per draw shared across the four
    /// counterfactual averages and all grid levels.
    pub share_weights: bool,
    /// Allow k to exceed the retained mediator posterior size by
    /// subsampling forests with replacement.
    pub subsample_with_replacement: bool,
    /// Keep the per-draw ratio vectors in the table.
    pub retain_draws: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            mediator_draw_mode: PredictiveMode::Mean,
            share_weights: true,
            subsample_with_replacement: false,
            retain_draws: true,
        }
    }
}

/// Closed-form counterfactual day mean:
/// exp{theta0 + f(x) + theta4.C_day + (theta2 + theta3x) mhat
///     + (theta2 + theta3x)^2 sigma2 / 2}.
///
/// With `sigma2 = 0` and `mhat` the realized mediator this is the fitted
/// conditional mean of the outcome regression.
pub fn counterfactual_day_mean(
    theta: &[f64],
    x: f64,
    mhat: f64,
    sigma2: f64,
    day: &DayRecord,
    spec: &DesignSpec,
) -> Result<f64> {
    if sigma2 < 0.0 {
        return Err(Error::argument("sigma2 must be non-negative"));
    }
    let basis_row = spec.temperature_basis().evaluate(x);
    let f_x = dot(&basis_row, blocks::temperature(theta, spec));
    let conf_row = spec.confounder_row(day);
    let conf = dot(&conf_row, blocks::confounders(theta, spec));
    let slope = mediator_slope(theta, spec, x);
    let exponent =
        blocks::intercept(theta) + f_x + conf + slope * mhat + 0.5 * slope * slope * sigma2;
    let value = math::exp(exponent);
    if !value.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite counterfactual mean on day {}",
            day.date
        )));
    }
    Ok(value)
}

/// theta2 + theta3 at the quartile of `x` (zero interaction in the first
/// quartile).
pub fn mediator_slope(theta: &[f64], spec: &DesignSpec, x: f64) -> f64 {
    let theta2 = blocks::mediator(theta, spec);
    let h = quartile_index(x, &spec.quartiles);
    if h == 0 {
        theta2
    } else {
        theta2 + blocks::interactions(theta, spec)[h - 1]
    }
}

/// Flat-Dirichlet weights over `t` observations as normalized unit-rate
/// exponentials.
pub fn bayesian_bootstrap_weights(t: usize, seed: u64) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::argument("need at least one observation"));
    }
    let mut rng = rng::root_rng(seed);
    let mut w = vec![0.0; t];
    dirichlet_into(&mut rng, &mut w);
    Ok(w)
}

fn dirichlet_into<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    let mut total = 0.0;
    for v in out.iter_mut() {
        let e: f64 = rng.sample(Exp1);
        *v = e;
        total += e;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
}

/// Precomputed state for the per-draw effect computation. Draw `k` is a
/// pure function of (engine, k), so callers may shard the K loop.
pub struct EffectEngine<'a> {
    ds_len: usize,
    k_draws: usize,
    seed: u64,
    options: EstimateOptions,
    theta_sampler: MvnSampler,
    outcome_spec: &'a DesignSpec,
    conf_out: Mat,
    /// Temperature-spline rows: index 0 = reference, then grid levels.
    temp_rows: Vec<Vec<f64>>,
    /// Quartile index per exposure value (0 = reference).
    quartile_idx: Vec<usize>,
    grid: &'a ExposureGrid,
    mediator: MediatorState<'a>,
}

enum MediatorState<'a> {
    Bart {
        post: &'a BartPosterior,
        /// Covariate rows with the exposure column overridden, one matrix
        /// per exposure value (0 = reference).
        z_rows: Vec<Mat>,
    },
    Linear {
        fit: &'a LinearMediatorFit,
        beta_sampler: MvnSampler,
        conf_med: Mat,
        /// Exposure-spline rows per value (0 = reference).
        temp_rows: Vec<Vec<f64>>,
    },
}

/// One draw's counterfactual ratios: `[pnde, tnde, pnie, tnie, te]` per
/// grid level.
pub type DrawRatios = Vec<[f64; 5]>;

impl<'a> EffectEngine<'a> {
    pub fn new(
        outcome: &'a OutcomeFit,
        mediator: MediatorModel<'a>,
        ds: &TimeSeriesDataset,
        grid: &'a ExposureGrid,
        k_draws: usize,
        seed: u64,
        options: EstimateOptions,
    ) -> Result<Self> {
        if !outcome.converged() {
            return Err(Error::argument("outcome fit did not converge"));
        }
        if k_draws < 100 {
            return Err(Error::argument("need at least 100 draws"));
        }
        if ds.is_empty() {
            return Err(Error::argument("empty dataset"));
        }
        let t = ds.len();
        let spec = &outcome.spec;
        let conf_out = build_confounder_matrix(ds, spec)?;
        let theta_sampler = MvnSampler::new(outcome.raw.theta.clone(), &outcome.raw.cov)?;

        let mut values = Vec::with_capacity(grid.n_levels() + 1);
        values.push(grid.reference_value);
        values.extend_from_slice(&grid.resolved_values);
        let temp_basis = spec.temperature_basis();
        let temp_rows: Vec<Vec<f64>> = values.iter().map(|x| temp_basis.evaluate(*x)).collect();
        let quartile_idx: Vec<usize> = values
            .iter()
            .map(|x| quartile_index(*x, &spec.quartiles))
            .collect();

        let mediator = match mediator {
            MediatorModel::Bart(post) => {
                if post.n_covariates != 6 {
                    return Err(Error::argument(
                        "mediator posterior was not fitted on the raw covariate layout",
                    ));
                }
                if !options.subsample_with_replacement && k_draws > post.n_draws() {
                    return Err(Error::argument(format!(
                        "{k_draws} draws requested but only {} mediator posterior draws retained; \
                         refit with more draws or enable subsampling with replacement",
                        post.n_draws()
                    )));
                }
                let z_rows = values
                    .iter()
                    .map(|x| {
                        let mut z = Mat::zeros(t, post.n_covariates);
                        for (r, day) in ds.rows.iter().enumerate() {
                            let row = z.row_mut(r);
                            row[0] = *x;
                            row[1] = day.humidity;
                            row[2] = day.doy as f64;
                            row[3] = day.year as f64;
                            row[4] = day.weekday.code() as f64;
                            row[5] = if day.holiday { 1.0 } else { 0.0 };
                        }
                        z
                    })
                    .collect();
                MediatorState::Bart { post, z_rows }
            }
            MediatorModel::Linear(fit) => {
                let beta_sampler = MvnSampler::new(fit.beta.clone(), &fit.cov_beta)?;
                let conf_med = build_confounder_matrix(ds, &fit.spec)?;
                let med_basis = fit.spec.temperature_basis();
                let med_rows = values.iter().map(|x| med_basis.evaluate(*x)).collect();
                MediatorState::Linear {
                    fit,
                    beta_sampler,
                    conf_med,
                    temp_rows: med_rows,
                }
            }
        };

        Ok(EffectEngine {
            ds_len: t,
            k_draws,
            seed,
            options,
            theta_sampler,
            outcome_spec: spec,
            conf_out,
            temp_rows,
            quartile_idx,
            grid,
            mediator,
        })
    }

    pub fn k_draws(&self) -> usize {
        self.k_draws
    }

    /// Mediator mean vectors per exposure value (0 = reference) for draw k.
    fn mediator_means(&self, k: usize, rng_k: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, f64) {
        let n_values = self.temp_rows.len();
        match &self.mediator {
            MediatorState::Bart { post, z_rows } => {
                let draw_idx = if self.options.subsample_with_replacement {
                    rng_k.random_range(0..post.n_draws())
                } else {
                    k
                };
                let sigma2 = post.sigma2(draw_idx);
                let sd = math::sqrt(sigma2);
                let means = z_rows
                    .iter()
                    .map(|z| {
                        let mut v = vec![0.0; self.ds_len];
                        for r in 0..self.ds_len {
                            let mut m = post.predict_row(draw_idx, z.row(r));
                            if self.options.mediator_draw_mode == PredictiveMode::Predictive {
                                let z_noise: f64 = rng_k.sample(StandardNormal);
                                m += sd * z_noise;
                            }
                            v[r] = m;
                        }
                        v
                    })
                    .collect();
                (means, sigma2)
            }
            MediatorState::Linear {
                fit,
                beta_sampler,
                conf_med,
                temp_rows,
            } => {
                let beta = beta_sampler.sample(rng_k);
                let conf_range = fit.spec.layout.confounders.clone();
                let conf_block = &beta[conf_range.start + 1..conf_range.end + 1];
                let temp_range = fit.spec.layout.temperature.clone();
                let temp_block = &beta[temp_range.start + 1..temp_range.end + 1];
                let conf_effect = conf_med.matvec(conf_block);
                let sigma2 = fit.sigma2;
                let sd = math::sqrt(sigma2);
                let means = (0..n_values)
                    .map(|vi| {
                        let gx = dot(&temp_rows[vi], temp_block);
                        let mut v = vec![0.0; self.ds_len];
                        for r in 0..self.ds_len {
                            let mut m = beta[0] + gx + conf_effect[r];
                            if self.options.mediator_draw_mode == PredictiveMode::Predictive {
                                let z_noise: f64 = rng_k.sample(StandardNormal);
                                m += sd * z_noise;
                            }
                            v[r] = m;
                        }
                        v
                    })
                    .collect();
                (means, sigma2)
            }
        }
    }

    /// Counterfactual ratios for draw `k`; deterministic in (engine, k).
    pub fn draw(&self, k: usize) -> Result<DrawRatios> {
        Ok(self
            .draw_averages(k)?
            .into_iter()
            .map(|avg| avg.ratios())
            .collect())
    }

    /// Bootstrap-averaged counterfactual means for draw `k`, one set per
    /// grid level; deterministic in (engine, k).
    pub fn draw_averages(&self, k: usize) -> Result<Vec<CounterfactualAverages>> {
        let mut rng_k = rng::substream(self.seed, k as u64);
        let theta = self.theta_sampler.sample(&mut rng_k);
        let (med_means, sigma2) = self.mediator_means(k, &mut rng_k);

        let t = self.ds_len;
        let spec = self.outcome_spec;
        let theta0 = blocks::intercept(&theta);
        let theta1 = blocks::temperature(&theta, spec);
        let theta2 = blocks::mediator(&theta, spec);
        let theta3 = blocks::interactions(&theta, spec);
        let theta4 = blocks::confounders(&theta, spec);
        let base = self.conf_out.matvec(theta4);

        let slope_of = |vi: usize| -> f64 {
            let h = self.quartile_idx[vi];
            if h == 0 {
                theta2
            } else {
                theta2 + theta3[h - 1]
            }
        };
        let f_of: Vec<f64> = self
            .temp_rows
            .iter()
            .map(|row| dot(row, theta1))
            .collect();

        // F(a, b) = sum_t w_t exp(theta0 + f_a + base_t + s_a m_b[t] + s_a^2 sigma2/2)
        let f_avg = |a: usize, b: usize, w: &[f64]| -> Result<f64> {
            let s = slope_of(a);
            let head = theta0 + f_of[a] + 0.5 * s * s * sigma2;
            let m_b = &med_means[b];
            let mut acc = 0.0;
            for i in 0..t {
                acc += w[i] * math::exp(head + base[i] + s * m_b[i]);
            }
            if !acc.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite counterfactual average at draw {k}"
                )));
            }
            Ok(acc)
        };

        let mut weights = vec![0.0; t];
        let mut out = Vec::with_capacity(self.grid.n_levels());
        if self.options.share_weights {
            dirichlet_into(&mut rng_k, &mut weights);
            let f_ref_ref = f_avg(0, 0, &weights)?;
            for li in 0..self.grid.n_levels() {
                let v = li + 1;
                out.push(CounterfactualAverages {
                    f_x_ref: f_avg(v, 0, &weights)?,
                    f_x_x: f_avg(v, v, &weights)?,
                    f_ref_x: f_avg(0, v, &weights)?,
                    f_ref_ref,
                });
            }
        } else {
            // Independent weights per counterfactual average; the exact
            // per-draw ratio identities no longer hold.
            for li in 0..self.grid.n_levels() {
                let v = li + 1;
                let mut next = |a: usize, b: usize| -> Result<f64> {
                    dirichlet_into(&mut rng_k, &mut weights);
                    f_avg(a, b, &weights)
                };
                out.push(CounterfactualAverages {
                    f_x_ref: next(v, 0)?,
                    f_x_x: next(v, v)?,
                    f_ref_x: next(0, v)?,
                    f_ref_ref: next(0, 0)?,
                });
            }
        }
        Ok(out)
    }
}

/// The four bootstrap-averaged nested-counterfactual means for one draw
/// and one exposure level: F(a, b) applies exposure `a` to the outcome
/// model and exposure `b` to the mediator model. All entries are positive
/// (exponential form).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualAverages {
    /// F(x, x*): exposed outcome, reference mediator.
    pub f_x_ref: f64,
    /// F(x, x).
    pub f_x_x: f64,
    /// F(x*, x).
    pub f_ref_x: f64,
    /// F(x*, x*).
    pub f_ref_ref: f64,
}

impl CounterfactualAverages {
    /// `[PNDE, TNDE, PNIE, TNIE, TE]`.
    pub fn ratios(&self) -> [f64; 5] {
        [
            self.f_x_ref / self.f_ref_ref,
            self.f_x_x / self.f_ref_x,
            self.f_ref_x / self.f_ref_ref,
            self.f_x_x / self.f_x_ref,
            self.f_x_x / self.f_ref_ref,
        ]
    }
}

/// Summarize per-draw ratios (in draw order) into the effect table.
pub fn summarize_draws(
    grid: &ExposureGrid,
    all_draws: &[DrawRatios],
    retain: bool,
) -> EffectTable {
    let k = all_draws.len();
    let rows = (0..grid.n_levels())
        .map(|li| {
            let effects: [EffectSummary; 5] = core::array::from_fn(|e| {
                let mut draws: Vec<f64> = (0..k).map(|ki| all_draws[ki][li][e]).collect();
                let point = math::mean(&draws);
                let mut sorted = draws.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let lo95 = math::quantile_sorted(&sorted, 0.025);
                let hi95 = math::quantile_sorted(&sorted, 0.975);
                let median = math::quantile_sorted(&sorted, 0.5);
                EffectSummary {
                    point,
                    lo95,
                    hi95,
                    median,
                    draws: if retain {
                        Some(core::mem::take(&mut draws))
                    } else {
                        None
                    },
                }
            });
            EffectRow {
                quantile: grid.exposure_quantiles[li],
                exposure_value: grid.resolved_values[li],
                effects,
            }
        })
        .collect();
    EffectTable {
        reference_quantile: grid.reference_quantile,
        reference_value: grid.reference_value,
        rows,
    }
}

/// Run the full K-draw effect estimation sequentially.
pub fn estimate_effects(
    outcome: &OutcomeFit,
    mediator: MediatorModel<'_>,
    ds: &TimeSeriesDataset,
    grid: &ExposureGrid,
    k_draws: usize,
    seed: u64,
    options: EstimateOptions,
) -> Result<EffectTable> {
    let engine = EffectEngine::new(outcome, mediator, ds, grid, k_draws, seed, options)?;
    let mut all = Vec::with_capacity(k_draws);
    for k in 0..k_draws {
        all.push(engine.draw(k)?);
    }
    Ok(summarize_draws(grid, &all, options.retain_draws))
}

/// Per-draw check of TE = TNDE x PNIE = PNDE x TNIE at every level.
pub fn effect_identities_check(table: &EffectTable, tol: f64) -> Result<bool> {
    for row in &table.rows {
        let get = |e: Estimand| -> Result<&Vec<f64>> {
            row.effects[e.index()]
                .draws
                .as_ref()
                .ok_or_else(|| Error::argument("effect table does not retain draws"))
        };
        let pnde = get(Estimand::Pnde)?;
        let tnde = get(Estimand::Tnde)?;
        let pnie = get(Estimand::Pnie)?;
        let tnie = get(Estimand::Tnie)?;
        let te = get(Estimand::Te)?;
        for k in 0..te.len() {
            if math::abs(te[k] - tnde[k] * pnie[k]) >= tol
                || math::abs(te[k] - pnde[k] * tnie[k]) >= tol
            {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
