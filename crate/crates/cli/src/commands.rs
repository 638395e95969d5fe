//! The single-step subcommands: generate, fit, predict, summarize, diagnose.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use dualview::assignment::AssignmentConfig;
use dualview::datagen::{generate, write_generated, Scenario, ScenarioConfig};
use dualview::diagnostics::{chain_diagnostics, cluster_count_histogram};
use dualview::dists::seeded_stream;
use dualview::gibbs::{read_chain, resume_chain, run_chain, Chain, ChainConfig, InitStrategy};
use dualview::io::{read_dataset, read_labels};
use dualview::model::{ModelVariant, DEFAULT_RIDGE};
use dualview::predict::{predict_lengths, write_predictions_csv};
use dualview::summarize::{
    adjusted_rand_index, canonical_labels, dahl_clustering, pairwise_matrix, PairwiseMatrix,
};
use serde::{Deserialize, Serialize};

use crate::config::write_resolved;
use crate::error::{at_path, CliError};

pub const CHAIN_FILE: &str = "chain.jsonl";
pub const RESOLVED_FILE: &str = "resolved_config.toml";
const PREDICT_STREAM: u64 = 2;

/// `predictions.csv` → `predictions.resolved_config.toml`.
pub fn sibling_config(out: &Path) -> PathBuf {
    out.with_extension("resolved_config.toml")
}

fn d_users() -> usize {
    50
}
fn d_threads() -> usize {
    100
}
fn d_feature_sd() -> f64 {
    0.1
}
fn d_five() -> f64 {
    5.0
}
fn d_iters() -> usize {
    30_000
}
fn d_burnin() -> usize {
    15_000
}
fn d_one() -> usize {
    1
}
fn d_init() -> InitStrategy {
    InitStrategy::AllInOne
}
fn d_aux() -> usize {
    dualview::assignment::DEFAULT_AUXILIARY
}
fn d_lambda() -> f64 {
    DEFAULT_RIDGE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub scenario: Scenario,
    pub out: PathBuf,
    #[serde(default = "d_users")]
    pub users: usize,
    #[serde(default = "d_threads")]
    pub threads: usize,
    #[serde(default = "d_threads")]
    pub test_threads: usize,
    #[serde(default = "d_feature_sd")]
    pub feature_sd: f64,
    #[serde(default = "d_five")]
    pub coef_sd: f64,
    #[serde(default = "d_five")]
    pub length_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GenerateConfig {
    pub fn scenario_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            n_users: self.users,
            n_threads_train: self.threads,
            n_threads_test: self.test_threads,
            feature_noise_sd: self.feature_sd,
            coef_noise_sd: self.coef_sd,
            length_noise_sd: self.length_sd,
            seed: self.seed,
        }
    }
}

pub fn run_generate(cfg: &GenerateConfig) -> Result<(), CliError> {
    let sc = cfg.scenario_config();
    let g = generate(cfg.scenario, &sc)?;
    write_generated(&cfg.out, cfg.scenario, &sc, &g)?;
    write_resolved(&cfg.out.join(RESOLVED_FILE), cfg)?;
    log::info!(
        "wrote {} users, {} + {} threads to {}",
        sc.n_users,
        sc.n_threads_train,
        sc.n_threads_test,
        cfg.out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub variant: ModelVariant,
    #[serde(default = "d_iters")]
    pub iters: usize,
    #[serde(default = "d_burnin")]
    pub burnin: usize,
    #[serde(default = "d_one")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_init")]
    pub init: InitStrategy,
    #[serde(default = "d_aux")]
    pub aux: usize,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub force: bool,
    #[serde(default)]
    pub resume: bool,
}

impl FitConfig {
    pub fn chain_config(&self) -> ChainConfig {
        let mut assignment = AssignmentConfig::new(self.variant);
        assignment.m_aux = self.aux;
        ChainConfig {
            n_iter: self.iters,
            burn_in: self.burnin,
            thin: self.thin,
            seed: self.seed,
            init: self.init,
            assignment,
            lambda: self.lambda,
        }
    }
}

pub fn run_fit(cfg: &FitConfig) -> Result<Chain, CliError> {
    if cfg.force && cfg.resume {
        return Err(CliError::Usage(
            "--force and --resume are mutually exclusive".into(),
        ));
    }
    let data = read_dataset(&cfg.data).map_err(at_path(&cfg.data))?;
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(CHAIN_FILE);
    let chain_cfg = cfg.chain_config();
    chain_cfg.validate()?;
    let chain = if path.exists() && cfg.resume {
        let existing = read_chain(&path);
        if let Ok(c) = &existing {
            if c.config != chain_cfg {
                return Err(CliError::Usage(
                    "existing chain was run with different settings".into(),
                ));
            }
        }
        resume_chain(&data, &path)?
    } else {
        if path.exists() && !cfg.force {
            return Err(CliError::Usage(format!(
                "{} exists; pass --force to overwrite or --resume to continue",
                path.display()
            )));
        }
        write_resolved(&cfg.out.join(RESOLVED_FILE), cfg)?;
        run_chain(&data, &chain_cfg, Some(&path))?
    };
    write_resolved(&cfg.out.join(RESOLVED_FILE), cfg)?;
    log::info!(
        "chain with {} records written to {}",
        chain.records.len(),
        path.display()
    );
    Ok(chain)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub chain: PathBuf,
    pub test: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

pub fn run_predict(cfg: &PredictConfig) -> Result<(), CliError> {
    let chain = read_chain(&cfg.chain).map_err(at_path(&cfg.chain))?;
    let test = read_dataset(&cfg.test).map_err(at_path(&cfg.test))?;
    let mut rng = seeded_stream(cfg.seed, PREDICT_STREAM);
    let s = predict_lengths(&chain, &test.participation, Some(&test.lengths), &mut rng)?;
    create_parent(&cfg.out)?;
    write_predictions_csv(&cfg.out, &s, Some(&test.lengths))?;
    write_resolved(&sibling_config(&cfg.out), cfg)?;
    if let Some(nll) = s.nll_total {
        log::info!("test negative log-likelihood {nll:.3}");
    }
    Ok(())
}

fn create_parent(p: &Path) -> Result<(), CliError> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarizeConfig {
    pub chain: PathBuf,
    pub out: PathBuf,
    /// Ground-truth `labels.csv` for the ARI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Test dataset for the negative log-likelihood.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Metrics {
    pub ari: Option<f64>,
    pub nll: Option<f64>,
    pub n_clusters_posterior_mode: usize,
    pub n_clusters_dahl: usize,
}

pub fn write_pairwise_csv(path: &Path, pm: &PairwiseMatrix) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let u = pm.probs.nrows();
    w.write_record((1..=u).map(|j| format!("u{j}")))?;
    for i in 0..u {
        w.write_record(pm.probs.row(i).iter().map(|p| p.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_clustering_csv(path: &Path, labels: &[usize]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "label"])?;
    for (u, l) in labels.iter().enumerate() {
        w.write_record([(u + 1).to_string(), (l + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `pairwise.csv`, `clustering.csv` and `metrics.json` into `out`.
pub fn summarize_chain(
    chain: &Chain,
    truth: Option<&[usize]>,
    test: Option<&dualview::model::Dataset>,
    out: &Path,
) -> Result<Metrics, CliError> {
    std::fs::create_dir_all(out)?;
    let pm = pairwise_matrix(chain)?;
    let dahl = dahl_clustering(chain, &pm)?;
    let labels = canonical_labels(&dahl.labels);
    let ari = truth.map(|z| adjusted_rand_index(z, &labels)).transpose()?;
    let nll = test
        .map(|t| dualview::predict::negative_loglik(chain, &t.participation, &t.lengths))
        .transpose()?;
    let metrics = Metrics {
        ari,
        nll,
        n_clusters_posterior_mode: cluster_count_histogram(chain)?.mode,
        n_clusters_dahl: labels.iter().max().map_or(0, |m| m + 1),
    };
    write_pairwise_csv(&out.join("pairwise.csv"), &pm)?;
    write_clustering_csv(&out.join("clustering.csv"), &labels)?;
    write_json(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, v)?;
    writeln!(f)?;
    Ok(())
}

pub fn run_summarize(cfg: &SummarizeConfig) -> Result<Metrics, CliError> {
    let chain = read_chain(&cfg.chain).map_err(at_path(&cfg.chain))?;
    let truth = cfg
        .truth
        .as_deref()
        .map(|p| read_labels(p).map_err(at_path(p)))
        .transpose()?;
    let test = cfg
        .test
        .as_deref()
        .map(|p| read_dataset(p).map_err(at_path(p)))
        .transpose()?;
    let m = summarize_chain(&chain, truth.as_deref(), test.as_ref(), &cfg.out)?;
    write_resolved(&cfg.out.join(RESOLVED_FILE), cfg)?;
    Ok(m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub chain: PathBuf,
    pub out: PathBuf,
}

pub fn run_diagnose(cfg: &DiagnoseConfig) -> Result<(), CliError> {
    let chain = read_chain(&cfg.chain).map_err(at_path(&cfg.chain))?;
    let report = chain_diagnostics(&chain)?;
    create_parent(&cfg.out)?;
    write_json(&cfg.out, &report)?;
    write_resolved(&sibling_config(&cfg.out), cfg)?;
    Ok(())
}
