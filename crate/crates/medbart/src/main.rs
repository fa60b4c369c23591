//! `medbart` - causal mediation analysis of daily count time series.
//!
//! Batch commands over a TOML config; errors leave a machine-readable JSON
//! envelope on stderr and a nonzero exit code (2 IO/data, 3 config, 4
//! numeric, 5 internal consistency).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use medbart::config::RunConfig;
use medbart::error::{AppError, AppResult};
use medbart::runner;

#[derive(Parser)]
#[command(name = "medbart", version, about = "Causal mediation analysis with a tree-ensemble mediator model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Reduced-scale preset (50 trees, 500 burn-in, 2,000 draws).
    #[arg(long)]
    desk: bool,
    /// Force the full-scale preset.
    #[arg(long)]
    full: bool,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the outcome and mediator models and write their artifacts.
    Fit(Common),
    /// Compute natural-effect tables from fit artifacts.
    Effects(Common),
    /// Run the simulation experiment (bias / RMSE / coverage).
    Simulate(Common),
    /// Generate the synthetic warm-season dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Series length override.
        #[arg(long)]
        t: Option<usize>,
        /// Generator seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path (defaults to <out>/synthetic.csv).
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Check a dataset against the input invariants.
    Validate {
        /// TOML run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Validate this CSV directly with the default column names.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn load(common: &Common) -> AppResult<(RunConfig, String)> {
    let (mut cfg, hash) = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    let cfg = cfg.finalize(common.desk, common.full)?;
    Ok((cfg, hash))
}

fn report_written(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn run() -> AppResult<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Fit(common) => {
            let (cfg, hash) = load(&common)?;
            report_written(&runner::cmd_fit(&cfg, &hash)?);
        }
        Command::Effects(common) => {
            let (cfg, hash) = load(&common)?;
            report_written(&runner::cmd_effects(&cfg, &hash)?);
        }
        Command::Simulate(common) => {
            let (cfg, hash) = load(&common)?;
            report_written(&runner::cmd_simulate(&cfg, &hash)?);
        }
        Command::Synth {
            common,
            t,
            seed,
            file,
        } => {
            let (mut cfg, hash) = load(&common)?;
            if let Some(t) = t {
                cfg.synth.t = t;
            }
            if let Some(seed) = seed {
                cfg.synth.seed = seed;
            }
            report_written(&runner::cmd_synth(&cfg, &hash, file.as_deref())?);
        }
        Command::Validate { config, input } => {
            let mut cfg = match &config {
                Some(path) => RunConfig::load(path)?.0,
                None => RunConfig::default(),
            };
            if let Some(input) = input {
                cfg.input.path = Some(input);
            }
            if cfg.input.path.is_none() {
                return Err(AppError::config(
                    "validate needs --input or an input.path in the config",
                ));
            }
            runner::cmd_validate(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.envelope());
            ExitCode::from(e.exit_code.clamp(0, 255) as u8)
        }
    }
}
