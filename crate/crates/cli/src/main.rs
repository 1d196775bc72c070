//! `cae` command-line tool.
//!
//! Log verbosity follows the `CAE_LOG` environment variable
//! (`error`, `warn`, `info`, `debug`, `trace`; default `warn`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use cae_core::experiment::{cmd_benchmark, cmd_evaluate, cmd_generate, cmd_train, ExperimentConfig};

#[derive(Parser)]
#[command(name = "cae", version, about = "Causal auto-encoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (`data.csv`) and its schema (`schema.json`).
    Generate(Common),
    /// Train every configured model and save `<name>.model.json`.
    Train(Common),
    /// Score a saved model on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Repeat train and evaluate over fresh splits and compare models.
    Benchmark(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> cae_core::Result<(ExperimentConfig, PathBuf)> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.override_seed(seed);
        }
        let out = self.out.clone().unwrap_or_else(|| config.out_dir.clone());
        Ok((config, out))
    }
}

fn run(cli: Cli) -> cae_core::Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let (config, out) = common.load()?;
            let written = cmd_generate(&config, &out)?;
            println!(
                "wrote {} rows to {} (schema {})",
                written.rows,
                written.data.display(),
                written.schema.display()
            );
        }
        Command::Train(common) => {
            let (config, out) = common.load()?;
            for summary in cmd_train(&config, &out)? {
                match summary.final_loss {
                    Some(loss) => println!("{}: final loss {loss:.6}", summary.model),
                    None => println!("{}: trained", summary.model),
                }
            }
        }
        Command::Evaluate { common, model } => {
            let (config, out) = common.load()?;
            let report = cmd_evaluate(&config, &model, &out)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            println!("{text}");
        }
        Command::Benchmark(common) => {
            let (config, out) = common.load()?;
            print!("{}", cmd_benchmark(&config, &out)?.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
