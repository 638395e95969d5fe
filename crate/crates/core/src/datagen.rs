//! Synthetic scenarios: agreement and disagreement between the two views,
//! and the iris features paired with synthetic behaviour.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dists::seeded_stream;
use crate::error::{Error, Result};
use crate::io::{write_dataset, write_labels, LABELS_FILE};
use crate::model::Dataset;

pub const N_AGREEMENT_CLUSTERS: usize = 5;

pub const IRIS_CSV: &str = include_str!("../data/iris.csv");
pub const IRIS_SHA256: &str = "91eb642c3adbc7bad8e99c930c11fa3a5cc8a07262c7a753b4e6ecf405f2e05e";

const FEATURE_STREAM: u64 = 10;
const COEF_STREAM: u64 = 11;
const TRAIN_STREAM: u64 = 12;
const TEST_STREAM: u64 = 13;
const SUBSET_STREAM: u64 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Agreement,
    Disagreement,
    Iris,
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agreement" => Ok(Scenario::Agreement),
            "disagreement" => Ok(Scenario::Disagreement),
            "iris" => Ok(Scenario::Iris),
            _ => Err(Error::InvalidParameter(format!("unknown scenario {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_users: usize,
    pub n_threads_train: usize,
    pub n_threads_test: usize,
    /// Per-dimension standard deviation of features around their cluster mean.
    pub feature_noise_sd: f64,
    /// Standard deviation of coefficients around their cluster mean.
    pub coef_noise_sd: f64,
    pub length_noise_sd: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_users: 50,
            n_threads_train: 100,
            n_threads_test: 100,
            feature_noise_sd: 0.1,
            coef_noise_sd: 5.0,
            length_noise_sd: 5.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::InvalidParameter("n_users must be positive".into()));
        }
        for (name, v) in [
            ("feature_noise_sd", self.feature_noise_sd),
            ("coef_noise_sd", self.coef_noise_sd),
            ("length_noise_sd", self.length_noise_sd),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Train and test sets share users, features and coefficients. Labels are
/// 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub train: Dataset,
    pub test: Dataset,
    pub coefficients: DVector<f64>,
    /// Ground truth of the behaviour view (and of both views when they agree).
    pub z_true: Vec<usize>,
    /// Ground truth of the feature view when it differs.
    pub z_feature: Option<Vec<usize>>,
}

/// `μ_z = (cos 2πz/5, sin 2πz/5)`.
pub fn agreement_feature_mean(z: usize) -> [f64; 2] {
    let a = 2.0 * PI * z as f64 / N_AGREEMENT_CLUSTERS as f64;
    [a.cos(), a.sin()]
}

/// `−50 + 25 z`.
pub fn agreement_coef_mean(z: usize) -> f64 {
    -50.0 + 25.0 * z as f64
}

fn balanced_labels(n_users: usize, k: usize) -> Result<Vec<usize>> {
    if !n_users.is_multiple_of(k) {
        return Err(Error::InvalidParameter(format!(
            "{n_users} users cannot be split into {k} equal clusters"
        )));
    }
    let per = n_users / k;
    Ok((0..n_users).map(|u| u / per + 1).collect())
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated standard deviation")
}

/// Bernoulli(0.5) participation and `y_t ~ N(p_tᵀ b, σ_y²)`.
pub fn gen_threads<R: Rng + ?Sized>(
    b: &DVector<f64>,
    n_threads: usize,
    sd: f64,
    rng: &mut R,
) -> (DMatrix<f64>, DVector<f64>) {
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let p = DMatrix::from_fn(
        b.len(),
        n_threads,
        |_, _| if coin.sample(rng) { 1.0 } else { 0.0 },
    );
    let noise = normal(0.0, sd);
    let y = DVector::from_fn(n_threads, |t, _| p.column(t).dot(b) + noise.sample(rng));
    (p, y)
}

fn assemble(
    cfg: &ScenarioConfig,
    features: DMatrix<f64>,
    coef_means: &[f64],
) -> Result<(Dataset, Dataset, DVector<f64>)> {
    let mut rng = seeded_stream(cfg.seed, COEF_STREAM);
    let b = DVector::from_fn(coef_means.len(), |u, _| {
        normal(coef_means[u], cfg.coef_noise_sd).sample(&mut rng)
    });
    let (p, y) = gen_threads(
        &b,
        cfg.n_threads_train,
        cfg.length_noise_sd,
        &mut seeded_stream(cfg.seed, TRAIN_STREAM),
    );
    let (pt, yt) = gen_threads(
        &b,
        cfg.n_threads_test,
        cfg.length_noise_sd,
        &mut seeded_stream(cfg.seed, TEST_STREAM),
    );
    let train = Dataset::new(features, p, y)?;
    let test = train.with_threads(pt, yt)?;
    Ok((train, test, b))
}

fn circle_features(cfg: &ScenarioConfig, z_feat: &[usize]) -> DMatrix<f64> {
    let mut rng = seeded_stream(cfg.seed, FEATURE_STREAM);
    let noise = normal(0.0, cfg.feature_noise_sd);
    DMatrix::from_fn(z_feat.len(), 2, |u, d| {
        agreement_feature_mean(z_feat[u])[d] + noise.sample(&mut rng)
    })
}

pub fn gen_agreement(cfg: &ScenarioConfig) -> Result<Generated> {
    cfg.validate()?;
    let z = balanced_labels(cfg.n_users, N_AGREEMENT_CLUSTERS)?;
    let features = circle_features(cfg, &z);
    let means: Vec<f64> = z.iter().map(|&k| agreement_coef_mean(k)).collect();
    let (train, test, coefficients) = assemble(cfg, features, &means)?;
    Ok(Generated {
        train,
        test,
        coefficients,
        z_true: z,
        z_feature: None,
    })
}

/// Behaviour clusters 4 and 5 share one feature mean.
pub fn gen_disagreement(cfg: &ScenarioConfig) -> Result<Generated> {
    cfg.validate()?;
    let z = balanced_labels(cfg.n_users, N_AGREEMENT_CLUSTERS)?;
    let z_feat: Vec<usize> = z.iter().map(|&k| k.min(4)).collect();
    let features = circle_features(cfg, &z_feat);
    let means: Vec<f64> = z.iter().map(|&k| agreement_coef_mean(k)).collect();
    let (train, test, coefficients) = assemble(cfg, features, &means)?;
    Ok(Generated {
        train,
        test,
        coefficients,
        z_true: z,
        z_feature: Some(z_feat),
    })
}

/// The 150 bundled iris rows: four measurements and species 1..3.
pub fn iris_table() -> Result<(DMatrix<f64>, Vec<usize>)> {
    let digest = hex::encode(Sha256::digest(IRIS_CSV.as_bytes()));
    if digest != IRIS_SHA256 {
        return Err(Error::DataFormat {
            file: "iris.csv".into(),
            msg: format!("checksum {digest} does not match"),
        });
    }
    let mut r = csv::Reader::from_reader(IRIS_CSV.as_bytes());
    let mut rows = Vec::new();
    let mut species: Vec<String> = Vec::new();
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |m: String| Error::DataFormat {
            file: "iris.csv".into(),
            msg: m,
        };
        let vals = (0..4)
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad value {:?}", &rec[i])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let name = &rec[4];
        let label = match species.iter().position(|s| s == name) {
            Some(i) => i + 1,
            None => {
                species.push(name.to_owned());
                species.len()
            }
        };
        rows.push(vals);
        labels.push(label);
    }
    Ok((DMatrix::from_fn(rows.len(), 4, |i, j| rows[i][j]), labels))
}

pub const IRIS_COEF_MEANS: [f64; 3] = [-25.0, 0.0, 25.0];

/// A seeded `n_users`-row subset of iris with sepal width, petal length and
/// petal width as features. `feature_noise_sd` is unused.
pub fn gen_iris(cfg: &ScenarioConfig) -> Result<Generated> {
    cfg.validate()?;
    let (table, species) = iris_table()?;
    if cfg.n_users > table.nrows() {
        return Err(Error::InvalidParameter(format!(
            "iris has only {} rows",
            table.nrows()
        )));
    }
    let mut rows = sample_indices(
        &mut seeded_stream(cfg.seed, SUBSET_STREAM),
        table.nrows(),
        cfg.n_users,
    )
    .into_vec();
    rows.sort_unstable();
    let features = DMatrix::from_fn(rows.len(), 3, |u, d| table[(rows[u], d + 1)]);
    let z: Vec<usize> = rows.iter().map(|&r| species[r]).collect();
    let means: Vec<f64> = z.iter().map(|&k| IRIS_COEF_MEANS[k - 1]).collect();
    let (train, test, coefficients) = assemble(cfg, features, &means)?;
    Ok(Generated {
        train,
        test,
        coefficients,
        z_true: z,
        z_feature: None,
    })
}

pub fn generate(scenario: Scenario, cfg: &ScenarioConfig) -> Result<Generated> {
    match scenario {
        Scenario::Agreement => gen_agreement(cfg),
        Scenario::Disagreement => gen_disagreement(cfg),
        Scenario::Iris => gen_iris(cfg),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioEcho {
    pub scenario: Scenario,
    #[serde(flatten)]
    pub config: ScenarioConfig,
}

/// Lays out `dir/train`, `dir/test` (each a dataset with `labels.csv`) and
/// `dir/scenario.json`. The disagreement feature truth goes to
/// `labels_feature.csv`.
pub fn write_generated(
    dir: &Path,
    scenario: Scenario,
    cfg: &ScenarioConfig,
    g: &Generated,
) -> Result<()> {
    for (sub, d) in [("train", &g.train), ("test", &g.test)] {
        let path = dir.join(sub);
        write_dataset(&path, d)?;
        write_labels(&path.join(LABELS_FILE), &g.z_true)?;
        if let Some(zf) = &g.z_feature {
            write_labels(&path.join("labels_feature.csv"), zf)?;
        }
    }
    let echo = ScenarioEcho {
        scenario,
        config: *cfg,
    };
    std::fs::write(
        dir.join("scenario.json"),
        serde_json::to_string_pretty(&echo)? + "\n",
    )?;
    Ok(())
}
