use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use riesz_cli::config::{preset, Experiment, ExperimentConfig, PRESETS};
use riesz_cli::run_experiment;

/// Generalized Ornstein constructions: spectral experiments.
#[derive(Parser, Debug)]
#[command(name = "riesz-lab", version)]
struct Cli {
    /// Experiment to run; defaults to the one named in the config.
    experiment: Option<Experiment>,

    /// TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in preset instead of a config file.
    #[arg(long, value_parser = PRESETS.map(|(n, _)| n))]
    preset: Option<String>,

    #[arg(long)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Grid size N.
    #[arg(long)]
    grid: Option<usize>,

    #[arg(long)]
    replicas: Option<usize>,

    #[arg(long)]
    epsilon: Option<f64>,
}

fn load(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => anyhow::bail!("pass --config FILE or --preset NAME"),
    };
    let num = &mut cfg.numeric;
    if let Some(s) = cli.seed {
        num.seed = s;
    }
    if let Some(n) = cli.grid {
        num.grid = Some(n);
    }
    if let Some(r) = cli.replicas {
        num.replicas = Some(r);
    }
    if let Some(e) = cli.epsilon {
        num.epsilon = e;
    }
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli).context("loading config") {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&cfg, cli.experiment) {
        Ok(outcome) => {
            for note in &outcome.notes {
                println!("note: {note}");
            }
            for failure in &outcome.failures {
                eprintln!("assertion failed: {failure}");
            }
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            ExitCode::from(outcome.status.code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
