//! Simulation experiment: freeze truth models estimated from a base
//! dataset, simulate negative-binomial outcome replicates, compute oracle
//! estimand values by two independent routes, and report percent relative
//! bias, RMSE, and 95% interval coverage per scenario.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bart::{fit_bart, BartConfig, BartPosterior};
use crate::basis::{
    build_confounder_matrix, build_mediator_design, build_outcome_design, quartile_index,
    DesignSpec, SplineDfs,
};
use crate::bart::tree::FrozenTree;
use crate::data::{sample_negative_binomial, DayRecord, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::glm::{blocks, fit_quasipoisson};
use crate::linalg::dot;
use crate::math;
use crate::mediation::{
    estimate_effects, Estimand, EstimateOptions, ExposureGrid, MediatorModel,
};
use crate::mediator_linear::{fit_linear_mediator, LinearMediatorFit};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MediatorKind {
    Linear,
    Bart,
}

impl MediatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MediatorKind::Linear => "linear",
            MediatorKind::Bart => "bart",
        }
    }
}

/// Single forest representing the posterior-mean prediction function:
/// every retained draw's trees concatenated with leaf values divided by
/// the number of draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanForest {
    pub trees: Vec<FrozenTree>,
    pub center: f64,
    pub scale: f64,
}

impl MeanForest {
    pub fn from_posterior(post: &BartPosterior) -> MeanForest {
        let d = post.n_draws() as f64;
        let mut trees = Vec::new();
        for draw in &post.draws {
            for tree in &draw.trees {
                let mut t = tree.clone();
                for node in &mut t.nodes {
                    if node.var < 0 {
                        node.value /= d;
                    }
                }
                trees.push(t);
            }
        }
        let scale = if post.half_range > 0.0 {
            2.0 * post.half_range
        } else {
            1.0
        };
        MeanForest {
            trees,
            center: post.center,
            scale,
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut s = 0.0;
        for t in &self.trees {
            s += t.eval(row);
        }
        self.center + self.scale * s
    }
}

/// Frozen mediator truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MediatorTruth {
    Linear(LinearMediatorFit),
    Bart(MeanForest),
}

/// Frozen data-generating process for the simulation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthModel {
    pub mediator: MediatorTruth,
    /// Residual variance of the mediator truth (original units).
    pub sigma2: f64,
    /// Outcome coefficients (intercept first) in the outcome spec layout.
    pub outcome_theta: Vec<f64>,
    pub outcome_spec: DesignSpec,
    /// Negative-binomial size; infinite means Poisson outcomes.
    pub nb_dispersion: f64,
    pub covariates: TimeSeriesDataset,
    // Per-day caches at the observed exposure.
    conf_dot: Vec<f64>,
    f_obs: Vec<f64>,
    slope_obs: Vec<f64>,
}

impl TruthModel {
    pub fn mediator_kind(&self) -> MediatorKind {
        match self.mediator {
            MediatorTruth::Linear(_) => MediatorKind::Linear,
            MediatorTruth::Bart(_) => MediatorKind::Bart,
        }
    }

    /// True mediator mean at exposure `x` with day `t`'s confounders.
    pub fn mediator_mean(&self, x: f64, day: &DayRecord) -> f64 {
        match &self.mediator {
            MediatorTruth::Linear(fit) => {
                let basis = fit.spec.temperature_basis().evaluate(x);
                let tr = fit.spec.layout.temperature.clone();
                let cr = fit.spec.layout.confounders.clone();
                let gx = dot(&basis, &fit.beta[tr.start + 1..tr.end + 1]);
                let conf = fit.spec.confounder_row(day);
                fit.beta[0] + gx + dot(&conf, &fit.beta[cr.start + 1..cr.end + 1])
            }
            MediatorTruth::Bart(forest) => {
                let row = [
                    x,
                    day.humidity,
                    day.doy as f64,
                    day.year as f64,
                    day.weekday.code() as f64,
                    if day.holiday { 1.0 } else { 0.0 },
                ];
                forest.predict(&row)
            }
        }
    }

    /// Replace the outcome coefficients (same layout, intercept first) and
    /// rebuild the per-day caches. Used to construct stress-test truths
    /// such as the null model.
    pub fn with_outcome_theta(mut self, theta: Vec<f64>) -> Result<TruthModel> {
        if theta.len() != self.outcome_theta.len() {
            return Err(Error::Dimension(format!(
                "expected {} outcome coefficients, got {}",
                self.outcome_theta.len(),
                theta.len()
            )));
        }
        self.outcome_theta = theta;
        self.rebuild_caches()?;
        Ok(self)
    }

    fn rebuild_caches(&mut self) -> Result<()> {
        let ds = &self.covariates;
        let conf = build_confounder_matrix(ds, &self.outcome_spec)?;
        self.conf_dot = conf.matvec(blocks::confounders(&self.outcome_theta, &self.outcome_spec));
        let temp_basis = self.outcome_spec.temperature_basis();
        let theta1 = blocks::temperature(&self.outcome_theta, &self.outcome_spec);
        self.f_obs = ds
            .rows
            .iter()
            .map(|d| dot(&temp_basis.evaluate(d.x), theta1))
            .collect();
        self.slope_obs = ds.rows.iter().map(|d| self.slope_at(d.x)).collect();
        Ok(())
    }

    /// theta2 + theta3 at the quartile of `x`.
    fn slope_at(&self, x: f64) -> f64 {
        let theta = &self.outcome_theta;
        let spec = &self.outcome_spec;
        let t2 = blocks::mediator(theta, spec);
        let h = quartile_index(x, &spec.quartiles);
        if h == 0 {
            t2
        } else {
            t2 + blocks::interactions(theta, spec)[h - 1]
        }
    }
}

/// Knobs for `make_truth`; the defaults run the reduced truth chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthConfig {
    pub dfs: SplineDfs,
    /// Chain used when the mediator truth is the tree model; the retained
    /// draws are collapsed into the mean forest.
    pub bart: BartConfig,
    /// Negative-binomial size of the outcome generator.
    pub nb_size: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            dfs: SplineDfs::default(),
            bart: BartConfig {
                n_trees: 50,
                burn_in: 500,
                n_draws: 50,
                thin: 10,
                ..BartConfig::default()
            },
            nb_size: 400.0,
        }
    }
}

/// Fit both model layers to `ds` and freeze them as the data-generating
/// truth.
pub fn make_truth(ds: &TimeSeriesDataset, kind: MediatorKind, seed: u64) -> Result<TruthModel> {
    make_truth_with(ds, kind, seed, &TruthConfig::default())
}

pub fn make_truth_with(
    ds: &TimeSeriesDataset,
    kind: MediatorKind,
    seed: u64,
    cfg: &TruthConfig,
) -> Result<TruthModel> {
    let outcome_spec = DesignSpec::outcome(ds, cfg.dfs)?;
    let design = build_outcome_design(ds, &outcome_spec, None, None)?;
    let outcome_fit = fit_quasipoisson(&design, &ds.counts())?;
    if !outcome_fit.converged() {
        return Err(Error::numeric("outcome fit for the truth model did not converge"));
    }
    let m = ds.mediators();
    let (mediator, sigma2) = match kind {
        MediatorKind::Linear => {
            let spec = DesignSpec::mediator_spline(ds, cfg.dfs)?;
            let med_design = build_mediator_design(ds, &spec)?;
            let fit = fit_linear_mediator(&med_design, &m)?;
            let s2 = fit.sigma2;
            (MediatorTruth::Linear(fit), s2)
        }
        MediatorKind::Bart => {
            let spec = DesignSpec::mediator_raw(ds)?;
            let med_design = build_mediator_design(ds, &spec)?;
            let bart_cfg = BartConfig {
                seed: rng::derive_seed(seed, 0xBA57),
                ..cfg.bart.clone()
            };
            let post = fit_bart(&med_design, &m, &bart_cfg)?;
            let s2 = (0..post.n_draws()).map(|k| post.sigma2(k)).sum::<f64>()
                / post.n_draws() as f64;
            (MediatorTruth::Bart(MeanForest::from_posterior(&post)), s2)
        }
    };

    let mut truth = TruthModel {
        mediator,
        sigma2,
        outcome_theta: outcome_fit.theta().to_vec(),
        outcome_spec,
        nb_dispersion: cfg.nb_size,
        covariates: ds.clone(),
        conf_dot: Vec::new(),
        f_obs: Vec::new(),
        slope_obs: Vec::new(),
    };
    truth.rebuild_caches()?;
    Ok(truth)
}

/// Simulate one dataset from the truth: mediator means plus Gaussian noise,
/// then negative-binomial counts through the outcome model. Covariates are
/// copied unchanged.
pub fn simulate_replicate(truth: &TruthModel, seed: u64) -> Result<TimeSeriesDataset> {
    let mut rng = rng::root_rng(seed);
    let sd = math::sqrt(truth.sigma2);
    let theta0 = blocks::intercept(&truth.outcome_theta);
    let mut rows = truth.covariates.rows.clone();
    for (t, day) in rows.iter_mut().enumerate() {
        let mean_m = truth.mediator_mean(day.x, day);
        let z: f64 = rng.sample(StandardNormal);
        let m = mean_m + sd * z;
        let eta = theta0 + truth.f_obs[t] + truth.conf_dot[t] + truth.slope_obs[t] * m;
        if eta > 700.0 {
            return Err(Error::numeric(format!(
                "outcome mean overflow at day {}",
                day.date
            )));
        }
        let mu = math::exp(eta);
        let y = sample_negative_binomial(&mut rng, mu, truth.nb_dispersion)?;
        day.m = m;
        day.y = y as i64;
    }
    Ok(TimeSeriesDataset { rows })
}

/// True effect values per grid level, all five estimands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimands {
    pub grid: ExposureGrid,
    /// Indexed by level, then `Estimand::index()`.
    pub values: Vec<[f64; 5]>,
    /// Largest relative disagreement between the closed-form and
    /// simulation routes across levels and estimands.
    pub max_route_gap: f64,
}

impl OracleEstimands {
    pub fn value(&self, level: usize, estimand: Estimand) -> f64 {
        self.values[level][estimand.index()]
    }
}

/// True estimands by the closed-form route, cross-checked against a direct
/// simulation route that draws mediator values and averages the
/// exponentiated outcome predictor. Routes disagreeing beyond 0.5%
/// signal an implementation inconsistency.
pub fn oracle_estimands(
    truth: &TruthModel,
    grid: &ExposureGrid,
    n_mc: usize,
    seed: u64,
) -> Result<OracleEstimands> {
    if n_mc < 100_000 {
        return Err(Error::argument("need at least 1e5 simulation draws"));
    }
    let ds = &truth.covariates;
    let t = ds.len();
    let theta = &truth.outcome_theta;
    let spec = &truth.outcome_spec;
    let theta0 = blocks::intercept(theta);
    let theta1 = blocks::temperature(theta, spec);
    let temp_basis = spec.temperature_basis();

    let mut values_x = Vec::with_capacity(grid.n_levels() + 1);
    values_x.push(grid.reference_value);
    values_x.extend_from_slice(&grid.resolved_values);
    let f_of: Vec<f64> = values_x
        .iter()
        .map(|x| dot(&temp_basis.evaluate(*x), theta1))
        .collect();
    let slope_of: Vec<f64> = values_x.iter().map(|x| truth.slope_at(*x)).collect();
    // Mediator means per exposure value and day.
    let med_means: Vec<Vec<f64>> = values_x
        .iter()
        .map(|x| {
            ds.rows
                .iter()
                .map(|day| truth.mediator_mean(*x, day))
                .collect()
        })
        .collect();

    // Closed route: E exp(sM) = exp(s mean + s^2 sigma2 / 2).
    let closed_f = |a: usize, b: usize| -> f64 {
        let s = slope_of[a];
        let head = theta0 + f_of[a] + 0.5 * s * s * truth.sigma2;
        let mut acc = 0.0;
        for i in 0..t {
            acc += math::exp(head + truth.conf_dot[i] + s * med_means[b][i]);
        }
        acc / t as f64
    };
    // Simulation route: draw mediator values per (b, day) and average the
    // exponentiated predictor directly; draws are shared across exposure
    // slopes so the ratios stay comparable.
    let reps = n_mc.div_ceil(t);
    let sd = math::sqrt(truth.sigma2);
    let mut rng = rng::root_rng(seed);
    // avg_exp[b][a][i] = MC estimate of E exp(slope_a * M_b) on day i.
    let n_vals = values_x.len();
    let mut avg_exp = vec![vec![vec![0.0; t]; n_vals]; n_vals];
    for b in 0..n_vals {
        for i in 0..t {
            let mean_m = med_means[b][i];
            let mut acc = vec![0.0; n_vals];
            for _ in 0..reps {
                let z: f64 = rng.sample(StandardNormal);
                let m = mean_m + sd * z;
                for (a, acc_a) in acc.iter_mut().enumerate() {
                    *acc_a += math::exp(slope_of[a] * m);
                }
            }
            for a in 0..n_vals {
                avg_exp[b][a][i] = acc[a] / reps as f64;
            }
        }
    }
    let mc_f = |a: usize, b: usize| -> f64 {
        let head = theta0 + f_of[a];
        let mut acc = 0.0;
        for i in 0..t {
            acc += math::exp(head + truth.conf_dot[i]) * avg_exp[b][a][i];
        }
        acc / t as f64
    };

    let ratios5 = |f: &dyn Fn(usize, usize) -> f64, v: usize| -> [f64; 5] {
        let f_x_ref = f(v, 0);
        let f_x_x = f(v, v);
        let f_ref_x = f(0, v);
        let f_ref_ref = f(0, 0);
        [
            f_x_ref / f_ref_ref,
            f_x_x / f_ref_x,
            f_ref_x / f_ref_ref,
            f_x_x / f_x_ref,
            f_x_x / f_ref_ref,
        ]
    };

    let mut values = Vec::with_capacity(grid.n_levels());
    let mut max_gap = 0.0f64;
    for li in 0..grid.n_levels() {
        let v = li + 1;
        let closed = ratios5(&closed_f, v);
        let mc = ratios5(&mc_f, v);
        for e in 0..5 {
            let gap = math::abs(closed[e] - mc[e]) / math::abs(closed[e]).max(1e-300);
            max_gap = max_gap.max(gap);
        }
        values.push(closed);
    }
    if max_gap > 0.005 {
        return Err(Error::InternalConsistency(format!(
            "closed-form and simulation oracle routes disagree by {:.3}%",
            100.0 * max_gap
        )));
    }
    Ok(OracleEstimands {
        grid: grid.clone(),
        values,
        max_route_gap: max_gap,
    })
}

/// Per-replicate interval estimates: `[level][estimand]` maps to
/// (point, lo, hi).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub cells: Vec<[(f64, f64, f64); 5]>,
}

/// Estimation settings applied to every replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub dfs: SplineDfs,
    /// Effect draws per replicate.
    pub k_draws: usize,
    /// Chain settings when fitting the tree mediator model.
    pub fit_bart: BartConfig,
    pub options: EstimateOptions,
    /// Simulation draws for the oracle cross-check.
    pub n_mc_oracle: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            dfs: SplineDfs::default(),
            k_draws: 2000,
            fit_bart: BartConfig::desk(),
            options: EstimateOptions {
                retain_draws: false,
                ..EstimateOptions::default()
            },
            n_mc_oracle: 100_000,
        }
    }
}

/// Simulate, refit, and estimate one replicate. Pure in
/// (truth, grid, fit_kind, cfg, rep_seed); replicate loops can be sharded.
pub fn run_replicate(
    truth: &TruthModel,
    grid: &ExposureGrid,
    fit_kind: MediatorKind,
    cfg: &ScenarioConfig,
    rep_seed: u64,
) -> Result<ReplicateEstimate> {
    let ds = simulate_replicate(truth, rng::derive_seed(rep_seed, 0x5EED))?;
    let spec = DesignSpec::outcome(&ds, cfg.dfs)?;
    let design = build_outcome_design(&ds, &spec, None, None)?;
    let outcome = fit_quasipoisson(&design, &ds.counts())?;
    let m = ds.mediators();
    let effect_seed = rng::derive_seed(rep_seed, 0xEFFEC7);
    let table = match fit_kind {
        MediatorKind::Linear => {
            let med_spec = DesignSpec::mediator_spline(&ds, cfg.dfs)?;
            let med_design = build_mediator_design(&ds, &med_spec)?;
            let fit = fit_linear_mediator(&med_design, &m)?;
            estimate_effects(
                &outcome,
                MediatorModel::Linear(&fit),
                &ds,
                grid,
                cfg.k_draws,
                effect_seed,
                cfg.options,
            )?
        }
        MediatorKind::Bart => {
            let med_spec = DesignSpec::mediator_raw(&ds)?;
            let med_design = build_mediator_design(&ds, &med_spec)?;
            let bart_cfg = BartConfig {
                seed: rng::derive_seed(rep_seed, 0xF17),
                n_draws: cfg.fit_bart.n_draws.max(cfg.k_draws),
                ..cfg.fit_bart.clone()
            };
            let post = fit_bart(&med_design, &m, &bart_cfg)?;
            estimate_effects(
                &outcome,
                MediatorModel::Bart(&post),
                &ds,
                grid,
                cfg.k_draws,
                effect_seed,
                cfg.options,
            )?
        }
    };
    let cells = table
        .rows
        .iter()
        .map(|row| {
            core::array::from_fn(|e| {
                let s = &row.effects[e];
                (s.point, s.lo95, s.hi95)
            })
        })
        .collect();
    Ok(ReplicateEstimate { cells })
}

/// Per (level, estimand) simulation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub quantile: f64,
    pub estimand: Estimand,
    /// 100 (mean point - truth) / truth, risk-ratio scale.
    pub pct_rb: f64,
    pub rmse: f64,
    /// Percent of intervals containing the truth.
    pub coverage: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub truth_kind: MediatorKind,
    pub fit_kind: MediatorKind,
    pub rows: Vec<MetricRow>,
    pub n_reps: usize,
    pub failures: usize,
    pub oracle: OracleEstimands,
}

/// Reduce replicate estimates against the oracle truth.
pub fn scenario_metrics(
    truth_kind: MediatorKind,
    fit_kind: MediatorKind,
    oracle: OracleEstimands,
    grid: &ExposureGrid,
    replicates: &[ReplicateEstimate],
    n_attempted: usize,
) -> ScenarioMetrics {
    let mut rows = Vec::new();
    for li in 0..grid.n_levels() {
        for est in Estimand::ALL {
            let truth_v = oracle.value(li, est);
            let e = est.index();
            let mut points: Vec<f64> = replicates.iter().map(|r| r.cells[li][e].0).collect();
            // Sorted reduction keeps the metrics exactly invariant to
            // replicate ordering.
            points.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n_used = points.len();
            let mean_pt = math::mean(&points);
            let pct_rb = 100.0 * (mean_pt - truth_v) / truth_v;
            let rmse = math::sqrt(
                points
                    .iter()
                    .map(|p| (p - truth_v) * (p - truth_v))
                    .sum::<f64>()
                    / n_used as f64,
            );
            let covered = replicates
                .iter()
                .filter(|r| {
                    let (_, lo, hi) = r.cells[li][e];
                    lo <= truth_v && truth_v <= hi
                })
                .count();
            rows.push(MetricRow {
                quantile: grid.exposure_quantiles[li],
                estimand: est,
                pct_rb,
                rmse,
                coverage: 100.0 * covered as f64 / n_used as f64,
                n_used,
            });
        }
    }
    ScenarioMetrics {
        truth_kind,
        fit_kind,
        rows,
        n_reps: n_attempted,
        failures: n_attempted - replicates.len(),
        oracle,
    }
}

/// Full scenario, sequential replicate loop. Replicate `i` uses seed
/// substream `i`, so parallel drivers reproduce these results exactly.
pub fn run_scenario(
    truth: &TruthModel,
    grid: &ExposureGrid,
    fit_kind: MediatorKind,
    n_reps: usize,
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<ScenarioMetrics> {
    if n_reps < 2 {
        return Err(Error::argument("need at least two replicates"));
    }
    let oracle = oracle_estimands(truth, grid, cfg.n_mc_oracle, rng::derive_seed(seed, 0x0AC1))?;
    let mut ok = Vec::with_capacity(n_reps);
    let mut failures = 0usize;
    for rep in 0..n_reps {
        match run_replicate(truth, grid, fit_kind, cfg, rng::derive_seed(seed, rep as u64)) {
            Ok(r) => ok.push(r),
            Err(_) => failures += 1,
        }
    }
    if failures * 20 > n_reps {
        return Err(Error::Numeric(format!(
            "{failures} of {n_reps} replicates failed to fit"
        )));
    }
    Ok(scenario_metrics(
        truth.mediator_kind(),
        fit_kind,
        oracle,
        grid,
        &ok,
        n_reps,
    ))
}
