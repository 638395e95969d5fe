//! Grids of (variant, thread count, replicate) cells run in parallel.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dualview::assignment::AssignmentConfig;
use dualview::datagen::{generate, write_generated, Scenario, ScenarioConfig};
use dualview::diagnostics::chain_diagnostics;
use dualview::dists::seeded_stream;
use dualview::gibbs::{run_chain, ChainConfig, InitStrategy};
use dualview::model::{ModelVariant, DEFAULT_RIDGE};
use dualview::predict::{predict_lengths, write_predictions_csv};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{summarize_chain, write_json, CHAIN_FILE, RESOLVED_FILE};
use crate::config::write_resolved;
use crate::error::CliError;

const PREDICT_STREAM: u64 = 2;

fn d_users() -> usize {
    50
}
fn d_threads() -> Vec<usize> {
    vec![10, 20, 50, 100]
}
fn d_test_threads() -> usize {
    100
}
fn d_variants() -> Vec<ModelVariant> {
    vec![ModelVariant::DualDp, ModelVariant::Single]
}
fn d_reps() -> usize {
    5
}
fn d_iters() -> usize {
    3_000
}
fn d_burnin() -> usize {
    1_500
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
fn d_feature_sd() -> f64 {
    0.1
}
fn d_five() -> f64 {
    5.0
}
fn d_lambda() -> f64 {
    DEFAULT_RIDGE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub out: PathBuf,
    #[serde(default = "d_users")]
    pub users: usize,
    #[serde(default = "d_threads")]
    pub threads: Vec<usize>,
    #[serde(default = "d_test_threads")]
    pub test_threads: usize,
    #[serde(default = "d_variants")]
    pub variants: Vec<ModelVariant>,
    #[serde(default = "d_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_iters")]
    pub iters: usize,
    #[serde(default = "d_burnin")]
    pub burnin: usize,
    #[serde(default = "d_one")]
    pub thin: usize,
    #[serde(default = "d_init")]
    pub init: InitStrategy,
    #[serde(default = "d_aux")]
    pub aux: usize,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_feature_sd")]
    pub feature_sd: f64,
    #[serde(default = "d_five")]
    pub coef_sd: f64,
    #[serde(default = "d_five")]
    pub length_sd: f64,
    /// Worker threads; 0 uses one per core.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub variant: ModelVariant,
    pub n_threads: usize,
    pub rep: usize,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!(
            "{}_T{}_rep{}",
            self.variant.to_string().replace(':', "-"),
            self.n_threads,
            self.rep
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub ari: Option<f64>,
    pub nll: Option<f64>,
    pub error: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.threads.is_empty() || self.variants.is_empty() || self.reps == 0 {
            return Err(CliError::Usage(
                "threads, variants and reps must be non-empty".into(),
            ));
        }
        self.chain_config(ModelVariant::DualDp, 0).validate()?;
        Ok(())
    }

    /// Variants vary fastest, then replicates, then thread counts.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &n_threads in &self.threads {
            for rep in 1..=self.reps {
                for &variant in &self.variants {
                    out.push(Cell {
                        variant,
                        n_threads,
                        rep,
                    });
                }
            }
        }
        out
    }

    fn data_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }

    fn scenario_config(&self, n_threads: usize, rep: usize) -> ScenarioConfig {
        ScenarioConfig {
            n_users: self.users,
            n_threads_train: n_threads,
            n_threads_test: self.test_threads,
            feature_noise_sd: self.feature_sd,
            coef_noise_sd: self.coef_sd,
            length_noise_sd: self.length_sd,
            seed: self.data_seed(rep),
        }
    }

    fn chain_config(&self, variant: ModelVariant, rep: usize) -> ChainConfig {
        let mut assignment = AssignmentConfig::new(variant);
        assignment.m_aux = self.aux;
        ChainConfig {
            n_iter: self.iters,
            burn_in: self.burnin,
            thin: self.thin,
            seed: self.data_seed(rep),
            init: self.init,
            assignment,
            lambda: self.lambda,
        }
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    dir: &Path,
) -> Result<(Option<f64>, Option<f64>), CliError> {
    std::fs::create_dir_all(dir)?;
    let sc = cfg.scenario_config(cell.n_threads, cell.rep);
    let g = generate(cfg.scenario, &sc)?;
    write_generated(&dir.join("data"), cfg.scenario, &sc, &g)?;
    let chain_cfg = cfg.chain_config(cell.variant, cell.rep);
    let chain = run_chain(&g.train, &chain_cfg, Some(&dir.join(CHAIN_FILE)))?;
    let metrics = summarize_chain(&chain, Some(&g.z_true), Some(&g.test), dir)?;
    let mut rng = seeded_stream(chain_cfg.seed, PREDICT_STREAM);
    let pred = predict_lengths(
        &chain,
        &g.test.participation,
        Some(&g.test.lengths),
        &mut rng,
    )?;
    write_predictions_csv(&dir.join("predictions.csv"), &pred, Some(&g.test.lengths))?;
    match chain_diagnostics(&chain) {
        Ok(r) => write_json(&dir.join("diagnostics.json"), &r)?,
        Err(e) => log::warn!("{}: diagnostics unavailable: {e}", cell.dir_name()),
    }
    Ok((metrics.ari, metrics.nll))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean_se(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = xs.len();
    if n == 0 {
        return (None, None);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (Some(m), None);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (Some(m), Some((var / n as f64).sqrt()))
}

pub fn summary_csv(results: &[CellResult]) -> String {
    let mut s = String::from("variant,n_threads,rep,ari,nll\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.cell.variant,
            r.cell.n_threads,
            r.cell.rep,
            fmt_opt(r.ari),
            fmt_opt(r.nll)
        );
    }
    s
}

pub fn summary_stats_csv(cfg: &ExperimentConfig, results: &[CellResult]) -> String {
    let mut s = String::from("variant,n_threads,n_ok,ari_mean,ari_se,nll_mean,nll_se\n");
    for &t in &cfg.threads {
        for &v in &cfg.variants {
            let rows: Vec<_> = results
                .iter()
                .filter(|r| r.cell.variant == v && r.cell.n_threads == t)
                .collect();
            let ari: Vec<f64> = rows.iter().filter_map(|r| r.ari).collect();
            let nll: Vec<f64> = rows.iter().filter_map(|r| r.nll).collect();
            let n_ok = rows.iter().filter(|r| r.error.is_none()).count();
            let (am, ase) = mean_se(&ari);
            let (nm, nse) = mean_se(&nll);
            let _ = writeln!(
                s,
                "{v},{t},{n_ok},{},{},{},{}",
                fmt_opt(am),
                fmt_opt(ase),
                fmt_opt(nm),
                fmt_opt(nse)
            );
        }
    }
    s
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<CellResult>, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    write_resolved(&cfg.out.join(RESOLVED_FILE), cfg)?;
    let cells = cfg.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let cells_dir = cfg.out.join("cells");
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let dir = cells_dir.join(cell.dir_name());
                match run_cell(cfg, cell, &dir) {
                    Ok((ari, nll)) => {
                        log::info!("{} done", cell.dir_name());
                        CellResult {
                            cell: cell.clone(),
                            ari,
                            nll,
                            error: None,
                        }
                    }
                    Err(e) => {
                        log::warn!("{} failed: {e}", cell.dir_name());
                        let msg = e.to_string();
                        let _ = std::fs::create_dir_all(&dir).and_then(|_| {
                            std::fs::write(dir.join("error.txt"), format!("{msg}\n"))
                        });
                        CellResult {
                            cell: cell.clone(),
                            ari: None,
                            nll: None,
                            error: Some(msg),
                        }
                    }
                }
            })
            .collect()
    });
    std::fs::write(cfg.out.join("summary.csv"), summary_csv(&results))?;
    std::fs::write(
        cfg.out.join("summary_stats.csv"),
        summary_stats_csv(cfg, &results),
    )?;
    Ok(results)
}
