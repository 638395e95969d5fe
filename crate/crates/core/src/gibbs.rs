//! The Gibbs sweep, chain initialisation, execution and JSON-lines storage.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assignment::{resample_alpha, sweep_assignments, AssignmentConfig};
use crate::behavior_view::{
    sample_behavior_cluster_params, sample_behavior_hypers, sample_behavior_hypers_prior,
    sample_behavior_prior, sample_coefficients, sample_noise_precision,
};
use crate::dists::seeded_stream;
use crate::error::{Error, Result};
use crate::feature_view::{
    sample_feature_cluster_params, sample_feature_hypers, sample_feature_hypers_prior,
    sample_feature_prior,
};
use crate::kmeans::{kmeans, DEFAULT_MAX_ITER, DEFAULT_RESTARTS};
use crate::model::{
    empirical_moments, BehaviorClusterParams, BehaviorHypers, DataMoments, Dataset,
    FeatureClusterParams, FeatureHypers, ModelState, ModelVariant, PreparedData, DEFAULT_RIDGE,
};

pub const CHAIN_FORMAT_VERSION: u32 = 1;
const PROGRESS_EVERY: usize = 1000;
const KMEANS_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum InitStrategy {
    AllInOne,
    /// Lloyd's k-means on the features with this many clusters.
    KMeans(usize),
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitStrategy::AllInOne => write!(f, "all-in-one"),
            InitStrategy::KMeans(k) => write!(f, "kmeans:{k}"),
        }
    }
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "all-in-one" || s == "allinone" {
            return Ok(InitStrategy::AllInOne);
        }
        let k = s
            .strip_prefix("kmeans:")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown init strategy '{s}'")))?;
        Ok(InitStrategy::KMeans(k))
    }
}

impl From<InitStrategy> for String {
    fn from(v: InitStrategy) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for InitStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub init: InitStrategy,
    pub assignment: AssignmentConfig,
    pub lambda: f64,
}

impl ChainConfig {
    /// 30000 iterations with the first 15000 discarded.
    pub fn paper(variant: ModelVariant, seed: u64) -> Self {
        ChainConfig {
            n_iter: 30_000,
            burn_in: 15_000,
            thin: 1,
            seed,
            init: InitStrategy::AllInOne,
            assignment: AssignmentConfig::new(variant),
            lambda: DEFAULT_RIDGE,
        }
    }

    /// 3000 iterations with the first 1500 discarded.
    pub fn desk(variant: ModelVariant, seed: u64) -> Self {
        ChainConfig {
            n_iter: 3_000,
            burn_in: 1_500,
            ..Self::paper(variant, seed)
        }
    }

    pub fn variant(&self) -> ModelVariant {
        self.assignment.variant
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.thin == 0 {
            return Err(Error::InvalidParameter(
                "n_iter and thin must be positive".into(),
            ));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidParameter(format!(
                "burn_in {} must be below n_iter {}",
                self.burn_in, self.n_iter
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParameter("lambda must be positive".into()));
        }
        self.assignment.validate()
    }
}

/// One recorded snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    /// Number of completed Gibbs steps, starting at 1.
    pub iter: usize,
    pub state: ModelState,
    /// Position of the chain's generator right after this step.
    pub rng_word_pos: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub config: ChainConfig,
    pub dataset_digest: String,
    pub records: Vec<ChainRecord>,
}

impl Chain {
    pub fn post_burn_in(&self) -> impl Iterator<Item = &ChainRecord> + '_ {
        let b = self.config.burn_in;
        self.records.iter().filter(move |r| r.iter > b)
    }

    /// Post-burn-in records, or an error if there are none.
    pub fn retained(&self) -> Result<Vec<&ChainRecord>> {
        let r: Vec<_> = self.post_burn_in().collect();
        if r.is_empty() {
            Err(Error::EmptyChain)
        } else {
            Ok(r)
        }
    }
}

/// SHA-256 over the dataset shape and the little-endian bytes of every entry.
pub fn dataset_digest(d: &Dataset) -> String {
    let mut h = Sha256::new();
    for n in [d.n_users(), d.n_features(), d.n_threads()] {
        h.update((n as u64).to_le_bytes());
    }
    for m in [&d.features, &d.participation] {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                h.update(m[(r, c)].to_le_bytes());
            }
        }
    }
    for v in d.lengths.iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn initial_labels(d: &Dataset, cfg: &ChainConfig) -> Result<(Vec<usize>, usize)> {
    let u = d.n_users();
    let (labels, n) = match (cfg.variant(), cfg.init) {
        (ModelVariant::Single, _) | (_, InitStrategy::AllInOne) => (vec![0; u], 1),
        (_, InitStrategy::KMeans(k)) => {
            let rows: Vec<DVector<f64>> = (0..u).map(|i| d.features.row(i).transpose()).collect();
            let mut rng = seeded_stream(cfg.seed, KMEANS_STREAM);
            (
                kmeans(&rows, k, DEFAULT_RESTARTS, DEFAULT_MAX_ITER, &mut rng)?.labels,
                k,
            )
        }
    };
    match cfg.variant() {
        ModelVariant::DualFixed(k) if n > k => Err(Error::InvalidParameter(format!(
            "initial clustering has {n} clusters but the fixed model has {k}"
        ))),
        ModelVariant::DualFixed(k) => Ok((labels, k)),
        _ => Ok((labels, n)),
    }
}

/// Initial state: assignments from the init strategy (padded with empty
/// components for fixed-K models), hypers and component parameters drawn from
/// their priors, coefficients at the ridge estimate, `s_y = 1/σ0²`, `α = 1`.
pub fn init_state(
    d: &Dataset,
    m: &DataMoments,
    cfg: &ChainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ModelState> {
    cfg.validate()?;
    if m.coef_mle.len() != d.n_users() || m.feat_mean.len() != d.n_features() {
        return Err(Error::DimensionMismatch(
            "data moments do not match the dataset".into(),
        ));
    }
    let (assignments, n_clusters) = initial_labels(d, cfg)?;
    let feature_hypers = sample_feature_hypers_prior(m, rng)?;
    let behavior_hypers = sample_behavior_hypers_prior(m, rng)?;
    let mut feature_params = Vec::with_capacity(n_clusters);
    let mut behavior_params = Vec::with_capacity(n_clusters);
    for _ in 0..n_clusters {
        feature_params.push(sample_feature_prior(&feature_hypers, rng)?);
        behavior_params.push(sample_behavior_prior(&behavior_hypers, rng)?);
    }
    let state = ModelState {
        assignments,
        feature_params,
        behavior_params,
        coefficients: m.coef_mle.clone(),
        noise_precision: 1.0 / m.length_var,
        feature_hypers,
        behavior_hypers,
        alpha: 1.0,
    };
    state.validate(cfg.variant().fixed_components().is_some())?;
    Ok(state)
}

/// One full sweep in the fixed order: feature components, feature hypers,
/// behavior components, behavior hypers, coefficients, noise precision,
/// assignments and `α`.
pub fn gibbs_step(
    state: &mut ModelState,
    data: &PreparedData,
    m: &DataMoments,
    cfg: &AssignmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let n_clusters = state.n_clusters();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (u, &z) in state.assignments.iter().enumerate() {
        members[z].push(u);
    }

    if cfg.variant.uses_feature_view() {
        for (k, users) in members.iter().enumerate() {
            let rows: Vec<&DVector<f64>> = users.iter().map(|&u| &data.rows[u]).collect();
            let current = state.feature_params[k].mean.clone();
            state.feature_params[k] =
                sample_feature_cluster_params(&rows, &current, &state.feature_hypers, rng)?;
        }
        state.feature_hypers =
            sample_feature_hypers(&state.feature_params, m, &state.feature_hypers, rng)?;
    }

    for (k, users) in members.iter().enumerate() {
        let coefs: Vec<f64> = users.iter().map(|&u| state.coefficients[u]).collect();
        let current = state.behavior_params[k].mean;
        state.behavior_params[k] =
            sample_behavior_cluster_params(&coefs, current, &state.behavior_hypers, rng)?;
    }
    state.behavior_hypers =
        sample_behavior_hypers(&state.behavior_params, m, &state.behavior_hypers, rng)?;

    state.coefficients = sample_coefficients(state, data, rng)?;
    state.noise_precision = sample_noise_precision(data, &state.coefficients, m, rng)?;

    sweep_assignments(state, data, cfg, rng)?;
    if !matches!(cfg.variant, ModelVariant::Single) {
        state.alpha = resample_alpha(
            state.n_occupied(),
            state.assignments.len(),
            state.alpha,
            rng,
        )?;
    }
    Ok(())
}

/// Runs a chain with moments computed from the dataset.
pub fn run_chain(d: &Dataset, cfg: &ChainConfig, out: Option<&Path>) -> Result<Chain> {
    let m = empirical_moments(d, cfg.lambda)?;
    run_chain_with_moments(d, &m, cfg, out)
}

/// Runs a chain against explicit moments, which is how data without enough
/// threads to estimate them is handled. With `out`, every record is appended
/// to a JSON-lines file as soon as it is drawn.
pub fn run_chain_with_moments(
    d: &Dataset,
    m: &DataMoments,
    cfg: &ChainConfig,
    out: Option<&Path>,
) -> Result<Chain> {
    cfg.validate()?;
    let digest = dataset_digest(d);
    let mut rng = seeded_stream(cfg.seed, 0);
    let state = init_state(d, m, cfg, &mut rng)?;
    let mut writer = match out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            write_header(&mut w, cfg, &digest)?;
            Some(w)
        }
        None => None,
    };
    let chain = Chain {
        config: *cfg,
        dataset_digest: digest,
        records: Vec::new(),
    };
    continue_chain(d, m, chain, state, 0, rng, writer.as_mut())
}

/// Continues an interrupted chain file from its last complete record.
pub fn resume_chain(d: &Dataset, path: &Path) -> Result<Chain> {
    let (chain, valid_len) = read_chain_prefix(path)?;
    if chain.dataset_digest != dataset_digest(d) {
        return Err(Error::ChainFormat(
            "chain was fitted to a different dataset".into(),
        ));
    }
    let m = empirical_moments(d, chain.config.lambda)?;
    resume_chain_with_moments(d, &m, path, chain, valid_len)
}

fn resume_chain_with_moments(
    d: &Dataset,
    m: &DataMoments,
    path: &Path,
    chain: Chain,
    valid_len: u64,
) -> Result<Chain> {
    let cfg = chain.config;
    let (state, done, rng) = match chain.records.last() {
        Some(r) => {
            let mut rng = seeded_stream(cfg.seed, 0);
            rng.set_word_pos(r.rng_word_pos);
            (r.state.clone(), r.iter, rng)
        }
        None => {
            let mut rng = seeded_stream(cfg.seed, 0);
            (init_state(d, m, &cfg, &mut rng)?, 0, rng)
        }
    };
    if done > 0 && done % cfg.thin != 0 {
        return Err(Error::ChainFormat(format!(
            "record at iteration {done} is off the thinning grid"
        )));
    }
    let file = OpenOptions::new().write(true).open(path)?;
    file.set_len(valid_len)?;
    let mut w = BufWriter::new(OpenOptions::new().append(true).open(path)?);
    continue_chain(d, m, chain, state, done, rng, Some(&mut w))
}

fn continue_chain(
    d: &Dataset,
    m: &DataMoments,
    mut chain: Chain,
    mut state: ModelState,
    done: usize,
    mut rng: ChaCha8Rng,
    mut writer: Option<&mut BufWriter<File>>,
) -> Result<Chain> {
    let cfg = chain.config;
    let data = PreparedData::new(d);
    let allow_empty = cfg.variant().fixed_components().is_some();
    for iter in done + 1..=cfg.n_iter {
        gibbs_step(&mut state, &data, m, &cfg.assignment, &mut rng)
            .and_then(|_| state.validate(allow_empty))
            .map_err(|e| Error::Step {
                iter,
                last_good: iter - 1,
                source: Box::new(e),
            })?;
        if iter % cfg.thin == 0 {
            let record = ChainRecord {
                iter,
                state: state.clone(),
                rng_word_pos: rng.get_word_pos(),
            };
            if let Some(w) = writer.as_deref_mut() {
                write_record(w, &record, cfg.burn_in)?;
            }
            chain.records.push(record);
        }
        if iter % PROGRESS_EVERY == 0 {
            log::info!(
                "iteration {iter}/{}: {} clusters, s_y {:.4}, alpha {:.4}",
                cfg.n_iter,
                state.n_occupied(),
                state.noise_precision,
                state.alpha
            );
        }
    }
    Ok(chain)
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ChainConfig,
    dataset_digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterJson {
    mu_a: Vec<f64>,
    #[serde(rename = "S_a")]
    s_a: Vec<Vec<f64>>,
    mu_f: f64,
    s_f: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureHypersJson {
    mu0: Vec<f64>,
    r0: Vec<Vec<f64>>,
    w0: Vec<Vec<f64>>,
    beta0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HypersJson {
    feature: FeatureHypersJson,
    behavior: BehaviorHypersJson,
}

#[derive(Debug, Serialize, Deserialize)]
struct BehaviorHypersJson {
    mu0: f64,
    r0: f64,
    w0: f64,
    beta0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordJson {
    iter: usize,
    burn_in: bool,
    /// 1-based labels.
    z: Vec<usize>,
    b: Vec<f64>,
    s_y: f64,
    alpha: f64,
    clusters: Vec<ClusterJson>,
    hypers: HypersJson,
    rng_word_pos: String,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

fn matrix_from(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::ChainFormat(format!("{what} is not a square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl RecordJson {
    fn from_record(r: &ChainRecord, burn_in: usize) -> Self {
        let s = &r.state;
        RecordJson {
            iter: r.iter,
            burn_in: r.iter <= burn_in,
            z: s.assignments.iter().map(|z| z + 1).collect(),
            b: s.coefficients.iter().copied().collect(),
            s_y: s.noise_precision,
            alpha: s.alpha,
            clusters: s
                .feature_params
                .iter()
                .zip(&s.behavior_params)
                .map(|(f, b)| ClusterJson {
                    mu_a: f.mean.iter().copied().collect(),
                    s_a: rows_of(&f.precision),
                    mu_f: b.mean,
                    s_f: b.precision,
                })
                .collect(),
            hypers: HypersJson {
                feature: FeatureHypersJson {
                    mu0: s.feature_hypers.mu0.iter().copied().collect(),
                    r0: rows_of(&s.feature_hypers.r0),
                    w0: rows_of(&s.feature_hypers.w0),
                    beta0: s.feature_hypers.beta0,
                },
                behavior: BehaviorHypersJson {
                    mu0: s.behavior_hypers.mu0,
                    r0: s.behavior_hypers.r0,
                    w0: s.behavior_hypers.w0,
                    beta0: s.behavior_hypers.beta0,
                },
            },
            rng_word_pos: r.rng_word_pos.to_string(),
        }
    }

    fn into_record(self) -> Result<ChainRecord> {
        if self.z.contains(&0) {
            return Err(Error::ChainFormat("labels are 1-based".into()));
        }
        let mut feature_params = Vec::with_capacity(self.clusters.len());
        let mut behavior_params = Vec::with_capacity(self.clusters.len());
        for c in &self.clusters {
            feature_params.push(FeatureClusterParams {
                mean: DVector::from_vec(c.mu_a.clone()),
                precision: matrix_from(&c.s_a, "S_a")?,
            });
            behavior_params.push(BehaviorClusterParams {
                mean: c.mu_f,
                precision: c.s_f,
            });
        }
        let h = self.hypers;
        let state = ModelState {
            assignments: self.z.iter().map(|z| z - 1).collect(),
            feature_params,
            behavior_params,
            coefficients: DVector::from_vec(self.b),
            noise_precision: self.s_y,
            feature_hypers: FeatureHypers {
                mu0: DVector::from_vec(h.feature.mu0),
                r0: matrix_from(&h.feature.r0, "R0")?,
                w0: matrix_from(&h.feature.w0, "W0")?,
                beta0: h.feature.beta0,
            },
            behavior_hypers: BehaviorHypers {
                mu0: h.behavior.mu0,
                r0: h.behavior.r0,
                w0: h.behavior.w0,
                beta0: h.behavior.beta0,
            },
            alpha: self.alpha,
        };
        let rng_word_pos = self
            .rng_word_pos
            .parse()
            .map_err(|_| Error::ChainFormat(format!("bad rng position '{}'", self.rng_word_pos)))?;
        Ok(ChainRecord {
            iter: self.iter,
            state,
            rng_word_pos,
        })
    }
}

fn write_header<W: Write>(w: &mut W, cfg: &ChainConfig, digest: &str) -> Result<()> {
    let header = Header {
        version: CHAIN_FORMAT_VERSION,
        config: *cfg,
        dataset_digest: digest.to_string(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_record<W: Write>(w: &mut W, r: &ChainRecord, burn_in: usize) -> Result<()> {
    serde_json::to_writer(&mut *w, &RecordJson::from_record(r, burn_in))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes a whole chain in the JSON-lines format.
pub fn write_chain(path: &Path, chain: &Chain) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, &chain.config, &chain.dataset_digest)?;
    for r in &chain.records {
        write_record(&mut w, r, chain.config.burn_in)?;
    }
    Ok(())
}

/// Reads complete records and reports the byte length they occupy; a final
/// line cut short by a crash is ignored.
fn read_chain_prefix(path: &Path) -> Result<(Chain, u64)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();
    let mut consumed = reader.read_line(&mut line)? as u64;
    if !line.ends_with('\n') {
        return Err(Error::ChainFormat("missing chain header".into()));
    }
    let header: Header = serde_json::from_str(&line)
        .map_err(|e| Error::ChainFormat(format!("bad chain header: {e}")))?;
    if header.version != CHAIN_FORMAT_VERSION {
        return Err(Error::ChainFormat(format!(
            "unsupported chain version {}",
            header.version
        )));
    }
    header.config.validate()?;
    let mut records = Vec::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 || !line.ends_with('\n') {
            break;
        }
        let rec: RecordJson = serde_json::from_str(&line)
            .map_err(|e| Error::ChainFormat(format!("record {}: {e}", records.len() + 1)))?;
        records.push(rec.into_record()?);
        consumed += n as u64;
    }
    Ok((
        Chain {
            config: header.config,
            dataset_digest: header.dataset_digest,
            records,
        },
        consumed,
    ))
}

pub fn read_chain(path: &Path) -> Result<Chain> {
    Ok(read_chain_prefix(path)?.0)
}
