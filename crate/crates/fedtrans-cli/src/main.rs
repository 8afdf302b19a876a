//! Command-line experiment runner.
//!
//! `fedtrans run <config.json>` executes an experiment end to end and writes
//! `results.csv`, `summary.json`, and `manifest.json` into the configured
//! output directory.  `fedtrans describe <config.json>` validates the config
//! and prints its resolved form, including the derived penalty formulas,
//! without running anything.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedtrans::experiment::{describe_config, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fedtrans", version, about = "Federated transfer learning experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Replace the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Replace the config's root seed (an explicit seed list is dropped).
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the config's replication count (an explicit seed list is
    /// dropped, so pair this with --seed or a root-seed config).
    #[arg(long)]
    replications: Option<usize>,
}

impl Overrides {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.display().to_string();
        }
        if let Some(seed) = self.seed {
            config.root_seed = Some(seed);
            config.seeds = None;
        }
        if let Some(replications) = self.replications {
            config.replications = replications;
            if config.seeds.is_some() {
                config.seeds = None;
                if config.root_seed.is_none() {
                    config.root_seed = Some(0);
                }
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every method over every replication and write the report files.
    Run {
        /// Path to the experiment config JSON.
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Validate a config and print its resolved form without running it.
    Describe {
        /// Path to the experiment config JSON.
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load_config(path: &PathBuf, overrides: &Overrides) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
    overrides.apply(&mut config);
    Ok(config)
}

fn run(path: &PathBuf, overrides: &Overrides) -> Result<(), String> {
    let config = load_config(path, overrides)?;
    let output = run_experiment(&config).map_err(|e| e.to_string())?;
    println!(
        "{:<14} {:>5} {:>12} {:>8} {:>8} {:>14} {:>14}",
        "method", "reps", "mse", "se", "auc", "grad_bytes", "hess_bytes"
    );
    for summary in &output.summaries {
        println!(
            "{:<14} {:>5} {:>12.6} {:>8.4} {:>8.4} {:>14} {:>14}",
            summary.method,
            summary.replications - summary.failures,
            summary.mse.mean,
            summary.mse.standard_error,
            summary.auc.mean,
            summary.comm_gradient_bytes,
            summary.comm_hessian_bytes,
        );
    }
    for failure in &output.errors {
        eprintln!(
            "warning: {} failed on seed {}: {}",
            failure.method, failure.seed, failure.message
        );
    }
    println!("rows:     {}", output.csv_path.display());
    println!("summary:  {}", output.summary_path.display());
    println!("manifest: {}", output.manifest_path.display());
    Ok(())
}

fn describe(path: &PathBuf, overrides: &Overrides) -> Result<(), String> {
    let config = load_config(path, overrides)?;
    let text = describe_config(&config).map_err(|e| e.to_string())?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, overrides } => run(config, overrides),
        Command::Describe { config, overrides } => describe(config, overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
