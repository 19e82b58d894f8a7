use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msfilter::compare::compare_kernels;
use msfilter::config::{ExperimentConfig, Overrides};
use msfilter::output::fmt_num;
use msfilter::run::{load_record, rerun_record, run_experiment, with_threads, Runner};
use msfilter::HarnessError;
use msfilter_core::analysis::{ck_bound, hmm_error_bound};
use serde_json::json;

#[derive(Parser)]
#[command(name = "msfilter", version, about = "Particle filters for multiscale diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (kernel, N, seed) cell and write the CSV and run record.
    Run {
        #[command(flatten)]
        common: Common,
        /// Re-run the configuration embedded in an existing run record.
        #[arg(long, conflicts_with = "config")]
        record: Option<PathBuf>,
    },
    /// Compare kernels at equal N and at equal per-step rv budget.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate and cache the synthetic truth runs only.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the particle-filter constant and the HMM error bracket.
    Bounds(BoundsArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "MSFILTER_OUT")]
    out_dir: Option<PathBuf>,
    /// Replace the seed list with one seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated kernel names.
    #[arg(long, value_delimiter = ',')]
    kernel: Option<Vec<String>>,
    /// Comma-separated particle counts.
    #[arg(long, value_delimiter = ',')]
    n_particles: Option<Vec<usize>>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out_dir: self.out_dir.clone(),
            seed: self.seed,
            kernel: self.kernel.clone(),
            n_particles: self.n_particles.clone(),
            threads: self.threads,
        }
    }

    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| HarnessError::config("config", "--config is required"))?;
        let mut config = ExperimentConfig::load(path)?;
        config.apply(&self.overrides());
        Ok(config)
    }
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    k: usize,
    #[arg(long = "K")]
    bound_k: f64,
    #[arg(long = "T")]
    horizon: usize,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    macro_step: f64,
    #[arg(long, default_value_t = 0.1)]
    micro_step: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Burst horizon.
    #[arg(long, default_value_t = 1.0)]
    n: f64,
    /// Burst replicas.
    #[arg(long = "M", default_value_t = 1.0)]
    replicas: f64,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { common, record } => {
            let out = match record {
                Some(path) => {
                    let rec = load_record(&path)?;
                    let out_dir = common.out_dir.clone();
                    rerun_record(&rec, out_dir.as_deref())?
                }
                None => run_experiment(&common.load()?)?,
            };
            let warnings: Vec<&String> = out.record.cells.iter().flat_map(|c| &c.warnings).collect();
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}",
                json!({
                    "experiment_id": out.record.experiment_id,
                    "csv": out.csv_path,
                    "record": out.record_path,
                    "cells": out.record.cells.len(),
                    "rows": out.record.csv_rows().len(),
                })
            );
        }
        Command::Compare { common } => {
            let out = compare_kernels(&common.load()?)?;
            print!("{}", out.comparison.to_csv());
            eprintln!("table written to {}", out.table_path.display());
        }
        Command::GenData { common } => {
            let config = common.load()?;
            let mut runner = Runner::new(&config)?;
            with_threads(config.threads, || -> Result<(), HarnessError> {
                for &seed in &config.seeds {
                    runner.data(seed)?;
                    println!("{}", json!({ "seed": seed, "path": runner.data_path(seed) }));
                }
                Ok(())
            })??;
        }
        Command::Bounds(b) => {
            let ck = ck_bound(b.bound_k, b.horizon, b.k, b.alpha)
                .map_err(|e| HarnessError::config("bounds", e.to_string()))?;
            let hmm = hmm_error_bound(b.macro_step, b.micro_step, b.lambda, b.n, b.replicas)
                .map_err(|e| HarnessError::config("bounds", e.to_string()))?;
            println!("ck_bound={}", fmt_num(ck));
            println!("hmm_error_bound={}", fmt_num(hmm));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
