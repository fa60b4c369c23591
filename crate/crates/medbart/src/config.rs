//! Run configuration: a TOML file with per-command sections; CLI flags
//! override a small number of fields. Defaults reproduce the production
//! analysis settings (200 trees, 5,000 burn-in, K = 20,000, deciles 0.55
//! to 0.95 against the median).

use std::fs;
use std::path::{Path, PathBuf};

use medbart_core::bart::{BartConfig, PredictiveMode};
use medbart_core::basis::SplineDfs;
use medbart_core::data::SynthParams;
use medbart_core::mediation::{EstimateOptions, ExposureGrid};
use medbart_core::simstudy::MediatorKind;
use serde::{Deserialize, Serialize};

use crate::csvio::ColumnSchema;
use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub path: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
    pub columns: ColumnSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Degrees of freedom for every smooth term.
    pub spline_df: usize,
    /// Mediator model choice: "bart" or "linear".
    pub mediator: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            spline_df: 6,
            mediator: "bart".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BartSection {
    pub n_trees: usize,
    pub burn_in: usize,
    pub n_draws: usize,
    pub thin: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    pub nu: f64,
    pub q: f64,
    pub n_cutpoints: usize,
    pub move_probs: [f64; 4],
    pub seed: u64,
}

impl Default for BartSection {
    fn default() -> Self {
        let d = BartConfig::default();
        BartSection {
            n_trees: d.n_trees,
            burn_in: d.burn_in,
            n_draws: d.n_draws,
            thin: d.thin,
            alpha: d.alpha,
            beta: d.beta,
            k: d.k,
            nu: d.nu,
            q: d.q,
            n_cutpoints: d.n_cutpoints,
            move_probs: d.move_probs,
            seed: 20240501,
        }
    }
}

impl BartSection {
    pub fn to_config(&self) -> BartConfig {
        BartConfig {
            n_trees: self.n_trees,
            burn_in: self.burn_in,
            n_draws: self.n_draws,
            thin: self.thin,
            alpha: self.alpha,
            beta: self.beta,
            k: self.k,
            nu: self.nu,
            q: self.q,
            n_cutpoints: self.n_cutpoints,
            move_probs: self.move_probs,
            seed: self.seed,
            fix_sigma2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectsSection {
    pub k_draws: usize,
    pub seed: u64,
    pub reference_quantile: f64,
    pub exposure_quantiles: Vec<f64>,
    /// "mean" or "predictive".
    pub mediator_draw_mode: String,
    pub subsample_with_replacement: bool,
    /// Also emit the per-draw ratio file.
    pub draws_file: bool,
}

impl Default for EffectsSection {
    fn default() -> Self {
        EffectsSection {
            k_draws: 20_000,
            seed: 20240502,
            reference_quantile: 0.5,
            exposure_quantiles: ExposureGrid::default_quantiles(),
            mediator_draw_mode: "mean".into(),
            subsample_with_replacement: false,
            draws_file: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// "linear", "bart", or "all".
    pub truth: String,
    /// "linear", "bart", or "all".
    pub fit: String,
    pub n_reps: usize,
    pub contrasts: Vec<f64>,
    pub reference_quantile: f64,
    pub k_draws: usize,
    pub seed: u64,
    pub n_mc_oracle: usize,
    /// Base dataset when no input path is configured.
    pub synth_t: usize,
    pub synth_seed: u64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            truth: "all".into(),
            fit: "all".into(),
            n_reps: 500,
            contrasts: vec![0.75, 0.85, 0.95],
            reference_quantile: 0.5,
            k_draws: 20_000,
            seed: 20240503,
            n_mc_oracle: 100_000,
            synth_t: 2208,
            synth_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub t: usize,
    pub seed: u64,
    pub params: SynthParams,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            t: 2208,
            seed: 1,
            params: SynthParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputSection,
    pub model: ModelSection,
    pub bart: BartSection,
    pub effects: EffectsSection,
    pub simulate: SimulateSection,
    pub synth: SynthSection,
    pub output: OutputSection,
    /// Reduced-scale preset: trees 50, burn-in 500, 2,000 draws, 200
    /// replicates.
    pub desk_preset: bool,
    /// Worker threads for parallel loops; 0 means all cores.
    pub workers: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> AppResult<(RunConfig, String)> {
        if !path.exists() {
            return Err(AppError::io_not_found(path));
        }
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| AppError::config(format!("{}: {e}", path.display())))?;
        let hash = crate::artifact::fnv1a_hex(text.as_bytes());
        Ok((cfg, hash))
    }

    /// Apply the desk preset and check cross-field constraints.
    pub fn finalize(mut self, desk_flag: bool, full_flag: bool) -> AppResult<RunConfig> {
        if desk_flag && full_flag {
            return Err(AppError::config("conflicting preset flags --desk and --full"));
        }
        if desk_flag {
            self.desk_preset = true;
        }
        if full_flag {
            self.desk_preset = false;
        }
        if self.desk_preset {
            self.bart.n_trees = 50;
            self.bart.burn_in = 500;
            self.bart.n_draws = 2000;
            self.effects.k_draws = self.effects.k_draws.min(2000);
            self.simulate.k_draws = self.simulate.k_draws.min(2000);
            self.simulate.n_reps = self.simulate.n_reps.min(200);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> AppResult<()> {
        if self.model.spline_df < 2 {
            return Err(AppError::config(format!(
                "spline_df = {} is too small (need >= 2)",
                self.model.spline_df
            )));
        }
        match self.model.mediator.as_str() {
            "bart" | "linear" => {}
            other => {
                return Err(AppError::config(format!(
                    "unknown mediator model `{other}` (expected `bart` or `linear`)"
                )))
            }
        }
        match self.effects.mediator_draw_mode.as_str() {
            "mean" | "predictive" => {}
            other => {
                return Err(AppError::config(format!(
                    "unknown mediator_draw_mode `{other}`"
                )))
            }
        }
        for q in self
            .effects
            .exposure_quantiles
            .iter()
            .chain(&self.simulate.contrasts)
            .chain([
                &self.effects.reference_quantile,
                &self.simulate.reference_quantile,
            ])
        {
            if !(*q > 0.0 && *q < 1.0) {
                return Err(AppError::config(format!("quantile {q} outside (0, 1)")));
            }
        }
        for name in [&self.simulate.truth, &self.simulate.fit] {
            match name.as_str() {
                "linear" | "bart" | "all" => {}
                other => {
                    return Err(AppError::config(format!(
                        "unknown simulate model `{other}`"
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn spline_dfs(&self) -> SplineDfs {
        SplineDfs {
            temperature: self.model.spline_df,
            humidity: self.model.spline_df,
            doy: self.model.spline_df,
        }
    }

    pub fn estimate_options(&self) -> EstimateOptions {
        EstimateOptions {
            mediator_draw_mode: if self.effects.mediator_draw_mode == "predictive" {
                PredictiveMode::Predictive
            } else {
                PredictiveMode::Mean
            },
            share_weights: true,
            subsample_with_replacement: self.effects.subsample_with_replacement,
            retain_draws: true,
        }
    }

    pub fn simulate_kinds(&self) -> (Vec<MediatorKind>, Vec<MediatorKind>) {
        let expand = |name: &str| -> Vec<MediatorKind> {
            match name {
                "linear" => vec![MediatorKind::Linear],
                "bart" => vec![MediatorKind::Bart],
                _ => vec![MediatorKind::Linear, MediatorKind::Bart],
            }
        };
        (expand(&self.simulate.truth), expand(&self.simulate.fit))
    }
}
