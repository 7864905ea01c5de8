//! `panelnet`: estimate panel models whose regressors are moments of daily
//! temperature series, then trace marginal effects and run counterfactual
//! scenarios.
//!
//! Every subcommand except `synth` is driven by a TOML run configuration;
//! see `RunConfig`. Outputs are CSV/JSON files in the configured output
//! directory, each accompanied by a manifest hashing the exact inputs.
//!
//! Exit codes: 0 success, 1 numerical failure (rank deficiency,
//! non-convergence), 2 invalid inputs or configuration. Errors are printed
//! to stderr as a one-line JSON object.

mod commands;
mod config;
mod manifest;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use panelnet::error::{Error, Result};

use crate::config::RunConfig;
use crate::synth::{SynthKind, SynthSpec};

#[derive(Parser)]
#[command(name = "panelnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, env = "PANELNET_CONFIG")]
    config: PathBuf,
    /// Override [fit].seed.
    #[arg(long, env = "PANELNET_SEED")]
    seed: Option<u64>,
    /// Override [output].dir.
    #[arg(long, env = "PANELNET_OUT")]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply_overrides(self.seed, self.out.clone());
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic fixture directory with known ground truth.
    Synth {
        /// Directory to create the fixture in.
        #[arg(long)]
        out: PathBuf,
        /// Generating model for the growth column.
        #[arg(long, value_enum, default_value_t = SynthKind::Linear)]
        kind: SynthKind,
        #[arg(long, default_value_t = 20)]
        regions: usize,
        #[arg(long, default_value_t = 8)]
        years: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build the moment feature table from daily temperatures.
    Ingest(ConfigArgs),
    /// Estimate the configured model and write fit.json.
    Fit(ConfigArgs),
    /// Compare hidden widths and keep the best fit.
    Select(ConfigArgs),
    /// Trace marginal effects with confidence bands.
    Margins {
        #[command(flatten)]
        config: ConfigArgs,
        /// Fit to evaluate; defaults to fit.json in the output directory.
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Apply a uniform shift to the moment inputs and report per-region
    /// response changes.
    Scenario {
        #[command(flatten)]
        config: ConfigArgs,
        /// Fit to evaluate; defaults to fit.json in the output directory.
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Comma-separated shift, one value per moment input (e.g. "2,0").
        #[arg(long, allow_hyphen_values = true)]
        shift: Option<String>,
    },
}

fn parse_shift(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("invalid shift component {part:?}")))
        })
        .collect()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            kind,
            regions,
            years,
            seed,
        } => synth::generate(
            &SynthSpec {
                kind,
                regions,
                years,
                seed,
            },
            &out,
        ),
        Command::Ingest(args) => commands::cmd_ingest(&args.load()?),
        Command::Fit(args) => commands::cmd_fit(&args.load()?),
        Command::Select(args) => commands::cmd_select(&args.load()?),
        Command::Margins { config, fit } => {
            commands::cmd_margins(&config.load()?, fit.as_deref())
        }
        Command::Scenario { config, fit, shift } => {
            let shift = shift.as_deref().map(parse_shift).transpose()?;
            commands::cmd_scenario(&config.load()?, fit.as_deref(), shift)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            let kind = match &error {
                Error::Validation(_) => "validation",
                Error::Parse { .. } => "parse",
                Error::Numerical(_) => "numerical",
                Error::Io(_) => "io",
            };
            let payload = serde_json::json!({
                "error": { "kind": kind, "message": error.to_string() }
            });
            eprintln!("{payload}");
            if matches!(error, Error::Numerical(_)) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
