//! Rayon drivers for the embarrassingly parallel loops. Work item `i`
//! always uses seed substream `i`, so results are identical to the
//! sequential drivers in `medbart-core` regardless of worker count.

use medbart_core::mediation::{
    summarize_draws, DrawRatios, EffectEngine, EffectTable, EstimateOptions, ExposureGrid,
    MediatorModel,
};
use medbart_core::glm::OutcomeFit;
use medbart_core::data::TimeSeriesDataset;
use medbart_core::rng::derive_seed;
use medbart_core::simstudy::{
    oracle_estimands, run_replicate, scenario_metrics, MediatorKind, ReplicateEstimate,
    ScenarioConfig, ScenarioMetrics, TruthModel,
};
use medbart_core::{Error as CoreError, Result as CoreResult};
use rayon::prelude::*;

use crate::error::{AppError, AppResult};

/// Scoped thread pool honoring the configured worker count (0 = default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> AppResult<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| AppError::new("internal.threads", 5, e.to_string()))?;
    Ok(pool.install(f))
}

/// Parallel version of `medbart_core::mediation::estimate_effects`.
pub fn estimate_effects_parallel(
    outcome: &OutcomeFit,
    mediator: MediatorModel<'_>,
    ds: &TimeSeriesDataset,
    grid: &ExposureGrid,
    k_draws: usize,
    seed: u64,
    options: EstimateOptions,
) -> CoreResult<EffectTable> {
    let engine = EffectEngine::new(outcome, mediator, ds, grid, k_draws, seed, options)?;
    let draws: CoreResult<Vec<DrawRatios>> =
        (0..k_draws).into_par_iter().map(|k| engine.draw(k)).collect();
    Ok(summarize_draws(grid, &draws?, options.retain_draws))
}

/// Parallel version of `medbart_core::simstudy::run_scenario`: identical
/// metrics, replicates sharded across threads.
pub fn run_scenario_parallel(
    truth: &TruthModel,
    grid: &ExposureGrid,
    fit_kind: MediatorKind,
    n_reps: usize,
    cfg: &ScenarioConfig,
    seed: u64,
) -> CoreResult<ScenarioMetrics> {
    if n_reps < 2 {
        return Err(CoreError::argument("need at least two replicates"));
    }
    let oracle = oracle_estimands(truth, grid, cfg.n_mc_oracle, derive_seed(seed, 0x0AC1))?;
    let results: Vec<CoreResult<ReplicateEstimate>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| run_replicate(truth, grid, fit_kind, cfg, derive_seed(seed, rep as u64)))
        .collect();
    let mut ok = Vec::with_capacity(n_reps);
    let mut failures = 0usize;
    for r in results {
        match r {
            Ok(est) => ok.push(est),
            Err(_) => failures += 1,
        }
    }
    if failures * 20 > n_reps {
        return Err(CoreError::Numeric(format!(
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
