//! Command implementations behind the CLI: fit, effects, simulate, synth,
//! validate. Each writes its outputs plus a manifest into the configured
//! output directory and returns the list of files written.

use std::fs;
use std::path::{Path, PathBuf};

use medbart_core::basis::{build_mediator_design, build_outcome_design, DesignSpec};
use medbart_core::data::{synthesize_dataset, validate, TimeSeriesDataset};
use medbart_core::glm::fit_quasipoisson;
use medbart_core::mediation::{Estimand, EstimateOptions, ExposureGrid, MediatorModel};
use medbart_core::mediator_linear::fit_linear_mediator;
use medbart_core::rng::derive_seed;
use medbart_core::simstudy::{make_truth_with, ScenarioConfig, TruthConfig};
use medbart_core::bart::fit_bart;

use crate::artifact::{
    hash_file, load_bart_posterior, load_linear_mediator, load_outcome_fit, save_artifact,
    save_bart_posterior, save_linear_mediator, save_outcome_fit, Manifest, DESIGN_FORMAT,
};
use serde::{Deserialize, Serialize};
use crate::config::RunConfig;
use crate::csvio::{load_dataset, load_holiday_list, write_dataset};
use crate::error::{AppError, AppResult};
use crate::parallel::{estimate_effects_parallel, run_scenario_parallel, with_workers};

pub const OUTCOME_FIT_FILE: &str = "outcome_fit.json";
pub const MEDIATOR_LINEAR_FILE: &str = "mediator_linear.json";
pub const MEDIATOR_BART_FILE: &str = "mediator_bart.json";
pub const DESIGN_META_FILE: &str = "design_meta.json";
pub const EFFECTS_FILE: &str = "effects.csv";
pub const EFFECTS_DRAWS_FILE: &str = "effects_draws.csv";
pub const SIMULATION_FILE: &str = "simulation.csv";
pub const SYNTH_FILE: &str = "synthetic.csv";

fn ensure_out_dir(cfg: &RunConfig) -> AppResult<PathBuf> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_input(cfg: &RunConfig) -> AppResult<(TimeSeriesDataset, String, PathBuf)> {
    let path = cfg
        .input
        .path
        .clone()
        .ok_or_else(|| AppError::config("no input.path configured"))?;
    let holidays = match &cfg.input.holidays {
        Some(p) => Some(load_holiday_list(p)?),
        None => None,
    };
    let ds = load_dataset(&path, &cfg.input.columns, holidays.as_ref())?;
    let report = validate(&ds);
    if !report.is_accepted() {
        let first = &report.errors[0];
        return Err(AppError::new(
            "data.validation",
            2,
            format!(
                "{} validation errors; first at row {} field {}: {}",
                report.errors.len(),
                first.row,
                first.field,
                first.message
            ),
        ));
    }
    let hash = hash_file(&path)?;
    Ok((ds, hash, path))
}

/// Fit both model layers and write the artifacts, design metadata, and a
/// manifest.
pub fn cmd_fit(cfg: &RunConfig, config_hash: &str) -> AppResult<Vec<PathBuf>> {
    let out = ensure_out_dir(cfg)?;
    let (ds, dataset_hash, _) = load_input(cfg)?;
    let dfs = cfg.spline_dfs();
    let mut written = Vec::new();

    let spec = DesignSpec::outcome(&ds, dfs)?;
    let design = build_outcome_design(&ds, &spec, None, None)?;
    let outcome = fit_quasipoisson(&design, &ds.counts())?;
    let mut manifest = Manifest::new("fit", config_hash, &dataset_hash)
        .seed("bart", cfg.bart.seed)
        .note(format!("mediator_model={}", cfg.model.mediator));
    for w in &outcome.raw.warnings {
        manifest = manifest.note(format!("outcome_fit: {w}"));
    }
    let p = out.join(OUTCOME_FIT_FILE);
    save_outcome_fit(&p, &dataset_hash, &outcome)?;
    written.push(p);

    let m = ds.mediators();
    let med_spec = match cfg.model.mediator.as_str() {
        "linear" => {
            let med_spec = DesignSpec::mediator_spline(&ds, dfs)?;
            let med_design = build_mediator_design(&ds, &med_spec)?;
            let fit = fit_linear_mediator(&med_design, &m)?;
            let p = out.join(MEDIATOR_LINEAR_FILE);
            save_linear_mediator(&p, &dataset_hash, &fit)?;
            written.push(p);
            med_spec
        }
        _ => {
            let med_spec = DesignSpec::mediator_raw(&ds)?;
            let med_design = build_mediator_design(&ds, &med_spec)?;
            let post = fit_bart(&med_design, &m, &cfg.bart.to_config())?;
            let p = out.join(MEDIATOR_BART_FILE);
            save_bart_posterior(&p, &dataset_hash, &post)?;
            written.push(p);
            med_spec
        }
    };
    let p = out.join(DESIGN_META_FILE);
    save_artifact(
        &p,
        DESIGN_FORMAT,
        &dataset_hash,
        &DesignMeta {
            outcome: spec,
            mediator: med_spec,
        },
    )?;
    written.push(p);
    let p = out.join("manifest_fit.json");
    manifest.save(&p)?;
    written.push(p);
    Ok(written)
}

/// Column order and frozen knots of both fitted designs, emitted beside
/// every fit for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignMeta {
    pub outcome: DesignSpec,
    pub mediator: DesignSpec,
}

fn format_float(v: f64) -> String {
    format!("{v}")
}

/// Recompute effects from fit artifacts; stale artifacts (dataset hash
/// mismatch) are refused.
pub fn cmd_effects(cfg: &RunConfig, config_hash: &str) -> AppResult<Vec<PathBuf>> {
    let out = ensure_out_dir(cfg)?;
    let (ds, dataset_hash, _) = load_input(cfg)?;
    let outcome_art = load_outcome_fit(&out.join(OUTCOME_FIT_FILE))?;
    if outcome_art.dataset_hash != dataset_hash {
        return Err(AppError::stale(format!(
            "outcome fit was built from dataset {} but the input hashes to {dataset_hash}; rerun `fit`",
            outcome_art.dataset_hash
        )));
    }
    let grid = ExposureGrid::resolve(
        &ds,
        cfg.effects.reference_quantile,
        &cfg.effects.exposure_quantiles,
    )?;
    let options = EstimateOptions {
        retain_draws: cfg.effects.draws_file,
        ..cfg.estimate_options()
    };
    let k = cfg.effects.k_draws;
    let seed = cfg.effects.seed;

    // The configured mediator model selects which artifact to load.
    let linear_path = out.join(MEDIATOR_LINEAR_FILE);
    let bart_path = out.join(MEDIATOR_BART_FILE);
    let table = if cfg.model.mediator.as_str() == "linear" {
        let art = load_linear_mediator(&linear_path)?;
        if art.dataset_hash != dataset_hash {
            return Err(AppError::stale("mediator fit is stale; rerun `fit`"));
        }
        with_workers(cfg.workers, || {
            estimate_effects_parallel(
                &outcome_art.payload,
                MediatorModel::Linear(&art.payload),
                &ds,
                &grid,
                k,
                seed,
                options,
            )
        })??
    } else {
        let art = load_bart_posterior(&bart_path)?;
        if art.dataset_hash != dataset_hash {
            return Err(AppError::stale("mediator posterior is stale; rerun `fit`"));
        }
        with_workers(cfg.workers, || {
            estimate_effects_parallel(
                &outcome_art.payload,
                MediatorModel::Bart(&art.payload),
                &ds,
                &grid,
                k,
                seed,
                options,
            )
        })??
    };

    let mut written = Vec::new();
    let effects_path = out.join(EFFECTS_FILE);
    {
        let mut w = csv::Writer::from_path(&effects_path)?;
        w.write_record([
            "exposure_quantile",
            "estimand",
            "point",
            "lo95",
            "hi95",
            "median",
        ])?;
        for row in &table.rows {
            for est in Estimand::ALL {
                let s = &row.effects[est.index()];
                w.write_record([
                    format_float(row.quantile),
                    est.as_str().to_string(),
                    format_float(s.point),
                    format_float(s.lo95),
                    format_float(s.hi95),
                    format_float(s.median),
                ])?;
            }
        }
        w.flush().map_err(AppError::from)?;
    }
    written.push(effects_path);

    if cfg.effects.draws_file {
        let draws_path = out.join(EFFECTS_DRAWS_FILE);
        let mut w = csv::Writer::from_path(&draws_path)?;
        w.write_record(["exposure_quantile", "estimand", "draw", "value"])?;
        for row in &table.rows {
            for est in Estimand::ALL {
                if let Some(draws) = &row.effects[est.index()].draws {
                    for (i, v) in draws.iter().enumerate() {
                        w.write_record([
                            format_float(row.quantile),
                            est.as_str().to_string(),
                            i.to_string(),
                            format_float(*v),
                        ])?;
                    }
                }
            }
        }
        w.flush().map_err(AppError::from)?;
        written.push(draws_path);
    }

    let p = out.join("manifest_effects.json");
    Manifest::new("effects", config_hash, &dataset_hash)
        .seed("effects", seed)
        .note(format!("k_draws={k}"))
        .note(format!("mediator_model={}", cfg.model.mediator))
        .note(format!(
            "mediator_draw_mode={}",
            cfg.effects.mediator_draw_mode
        ))
        .save(&p)?;
    written.push(p);
    Ok(written)
}

/// Simulation experiment over the requested truth x fitted-model grid.
pub fn cmd_simulate(cfg: &RunConfig, config_hash: &str) -> AppResult<Vec<PathBuf>> {
    let out = ensure_out_dir(cfg)?;
    let (base, dataset_hash) = match &cfg.input.path {
        Some(_) => {
            let (ds, hash, _) = load_input(cfg)?;
            (ds, hash)
        }
        None => {
            let ds = synthesize_dataset(
                cfg.simulate.synth_t,
                cfg.simulate.synth_seed,
                &cfg.synth.params,
            )?;
            (ds, format!("synth:{}", cfg.simulate.synth_seed))
        }
    };
    let grid = ExposureGrid::resolve(
        &base,
        cfg.simulate.reference_quantile,
        &cfg.simulate.contrasts,
    )?;
    let scen_cfg = ScenarioConfig {
        dfs: cfg.spline_dfs(),
        k_draws: cfg.simulate.k_draws,
        fit_bart: cfg.bart.to_config(),
        options: EstimateOptions {
            retain_draws: false,
            ..cfg.estimate_options()
        },
        n_mc_oracle: cfg.simulate.n_mc_oracle,
    };
    let truth_cfg = TruthConfig {
        dfs: cfg.spline_dfs(),
        ..TruthConfig::default()
    };
    let (truth_kinds, fit_kinds) = cfg.simulate_kinds();

    let mut manifest = Manifest::new("simulate", config_hash, &dataset_hash)
        .seed("simulate", cfg.simulate.seed)
        .note(format!("n_reps={}", cfg.simulate.n_reps))
        .note(format!("k_draws={}", cfg.simulate.k_draws))
        .note(format!("desk_preset={}", cfg.desk_preset));
    let sim_path = out.join(SIMULATION_FILE);
    let mut w = csv::Writer::from_path(&sim_path)?;
    w.write_record([
        "truth_model",
        "fitted_model",
        "contrast",
        "estimand",
        "pct_rb",
        "rmse",
        "coverage",
        "n_used",
        "n_reps",
        "failures",
    ])?;
    for (ti, truth_kind) in truth_kinds.iter().enumerate() {
        let truth_seed = derive_seed(cfg.simulate.seed, 0x7070 + ti as u64);
        let truth = make_truth_with(&base, *truth_kind, truth_seed, &truth_cfg)?;
        manifest = manifest.seed(&format!("truth_{}", truth_kind.as_str()), truth_seed);
        for (fi, fit_kind) in fit_kinds.iter().enumerate() {
            let scen_seed = derive_seed(cfg.simulate.seed, (0x5C00 + ti * 7 + fi) as u64);
            manifest = manifest.seed(
                &format!("scenario_{}_{}", truth_kind.as_str(), fit_kind.as_str()),
                scen_seed,
            );
            let metrics = with_workers(cfg.workers, || {
                run_scenario_parallel(
                    &truth,
                    &grid,
                    *fit_kind,
                    cfg.simulate.n_reps,
                    &scen_cfg,
                    scen_seed,
                )
            })??;
            // Reported estimands: PNDE, TNIE, TE.
            let reported = [Estimand::Pnde, Estimand::Tnie, Estimand::Te];
            for row in metrics.rows.iter().filter(|r| reported.contains(&r.estimand)) {
                w.write_record([
                    truth_kind.as_str().to_string(),
                    fit_kind.as_str().to_string(),
                    format_float(row.quantile),
                    row.estimand.as_str().to_string(),
                    format_float(row.pct_rb),
                    format_float(row.rmse),
                    format_float(row.coverage),
                    row.n_used.to_string(),
                    metrics.n_reps.to_string(),
                    metrics.failures.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(AppError::from)?;
    let mut written = vec![sim_path];
    let p = out.join("manifest_simulate.json");
    manifest.save(&p)?;
    written.push(p);
    Ok(written)
}

/// Generate and write the synthetic dataset.
pub fn cmd_synth(cfg: &RunConfig, config_hash: &str, out_file: Option<&Path>) -> AppResult<Vec<PathBuf>> {
    let out = ensure_out_dir(cfg)?;
    let ds = synthesize_dataset(cfg.synth.t, cfg.synth.seed, &cfg.synth.params)?;
    let path = out_file
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(SYNTH_FILE));
    write_dataset(&ds, &path)?;
    let manifest_path = out.join("manifest_synth.json");
    Manifest::new("synth", config_hash, &hash_file(&path)?)
        .seed("synth", cfg.synth.seed)
        .note(format!("t={}", cfg.synth.t))
        .save(&manifest_path)?;
    Ok(vec![path, manifest_path])
}

/// Validate a dataset and print the report as JSON to stdout.
pub fn cmd_validate(cfg: &RunConfig) -> AppResult<()> {
    let path = cfg
        .input
        .path
        .clone()
        .ok_or_else(|| AppError::config("no input.path configured"))?;
    let holidays = match &cfg.input.holidays {
        Some(p) => Some(load_holiday_list(p)?),
        None => None,
    };
    let ds = load_dataset(&path, &cfg.input.columns, holidays.as_ref())?;
    let report = validate(&ds);
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(AppError::from)?
    );
    if report.is_accepted() {
        Ok(())
    } else {
        Err(AppError::new(
            "data.validation",
            2,
            format!("{} validation errors", report.errors.len()),
        ))
    }
}
