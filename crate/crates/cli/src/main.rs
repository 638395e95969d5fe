mod commands;
mod config;
mod error;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::commands::{DiagnoseConfig, FitConfig, GenerateConfig, PredictConfig, SummarizeConfig};
use crate::config::resolve;
use crate::error::CliError;
use crate::experiment::ExperimentConfig;

/// Dual-view Dirichlet process clustering of forum users.
#[derive(Debug, Parser)]
#[command(name = "dualview", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic train/test dataset.
    Generate(GenerateArgs),
    /// Run a Gibbs chain on a dataset.
    Fit(FitArgs),
    /// Posterior predictive thread lengths for a test set.
    Predict(PredictArgs),
    /// Pairwise co-clustering, point clustering and metrics.
    Summarize(SummarizeArgs),
    /// Convergence diagnostics of a chain.
    Diagnose(DiagnoseArgs),
    /// Run a grid of fits in parallel.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    /// TOML file of defaults; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// agreement, disagreement or iris.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    users: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test_threads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    feature_sd: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    coef_sd: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    length_sd: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Directory with features.csv, participation.csv and lengths.csv.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Output directory for chain.jsonl.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// dual-dp, dual-fixed:K or single.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    variant: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    burnin: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    thin: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// all-in-one or kmeans:K.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    init: Option<String>,
    /// Auxiliary components per assignment update.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    aux: Option<usize>,
    /// Ridge penalty of the empirical coefficient estimate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    /// Overwrite an existing chain.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    force: bool,
    /// Continue an existing chain from its last record.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    resume: bool,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    chain: Option<PathBuf>,
    /// Test dataset directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
struct SummarizeArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    chain: Option<PathBuf>,
    /// Ground-truth labels.csv.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<PathBuf>,
    /// Test dataset directory, for the negative log-likelihood.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DiagnoseArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    chain: Option<PathBuf>,
    /// Output JSON.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ExperimentArgs {
    /// TOML experiment description.
    #[arg(long, alias = "config")]
    #[serde(skip)]
    spec: PathBuf,
    /// Overrides `out` in the experiment file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// Overrides `workers` in the experiment file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    workers: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => {
            let cfg: GenerateConfig = resolve(a.config.as_deref(), &a)?;
            commands::run_generate(&cfg)
        }
        Command::Fit(a) => {
            let cfg: FitConfig = resolve(a.config.as_deref(), &a)?;
            commands::run_fit(&cfg).map(|_| ())
        }
        Command::Predict(a) => {
            let cfg: PredictConfig = resolve(a.config.as_deref(), &a)?;
            commands::run_predict(&cfg)
        }
        Command::Summarize(a) => {
            let cfg: SummarizeConfig = resolve(a.config.as_deref(), &a)?;
            let m = commands::run_summarize(&cfg)?;
            println!("{}", serde_json::to_string(&m)?);
            Ok(())
        }
        Command::Diagnose(a) => {
            let cfg: DiagnoseConfig = resolve(a.config.as_deref(), &a)?;
            commands::run_diagnose(&cfg)
        }
        Command::Experiment(a) => {
            let cfg: ExperimentConfig = resolve(Some(&a.spec), &a)?;
            let results = experiment::run_experiment(&cfg)?;
            let failed = results.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                log::warn!("{failed} of {} cells failed", results.len());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { 1 } else { 0 };
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
