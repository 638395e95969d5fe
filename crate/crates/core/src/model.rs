//! Observed data, per-cluster parameters, hyperparameters and the Gibbs state.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spd_cholesky;

/// Default ridge regularisation for the coefficient estimates that centre the
/// behaviour-view hyperpriors.
pub const DEFAULT_RIDGE: f64 = 0.01;

/// The observed world: user features, thread participation and thread lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `U × D`, one row per user.
    pub features: DMatrix<f64>,
    /// `U × T`, entry 1 iff the user was among the first posters of the thread.
    pub participation: DMatrix<f64>,
    /// `T` thread lengths.
    pub lengths: DVector<f64>,
}

impl Dataset {
    pub fn new(
        features: DMatrix<f64>,
        participation: DMatrix<f64>,
        lengths: DVector<f64>,
    ) -> Result<Self> {
        validate_dataset(Dataset {
            features,
            participation,
            lengths,
        })
    }

    pub fn n_users(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_threads(&self) -> usize {
        self.lengths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (u, d) = self.features.shape();
        if u == 0 || d == 0 {
            return Err(Error::DimensionMismatch(format!(
                "features must have at least one user and one dimension, got {u}x{d}"
            )));
        }
        if self.participation.nrows() != u {
            return Err(Error::DimensionMismatch(format!(
                "participation has {} rows but features has {u} users",
                self.participation.nrows()
            )));
        }
        if self.participation.ncols() != self.lengths.len() {
            return Err(Error::DimensionMismatch(format!(
                "participation has {} threads but lengths has {}",
                self.participation.ncols(),
                self.lengths.len()
            )));
        }
        for ((row, col), v) in iter_indexed(&self.features) {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "features",
                    row,
                    col,
                });
            }
        }
        for ((user, thread), v) in iter_indexed(&self.participation) {
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryParticipation {
                    user,
                    thread,
                    value: v,
                });
            }
        }
        for (row, v) in self.lengths.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "lengths",
                    row,
                    col: 0,
                });
            }
        }
        Ok(())
    }

    /// Same users and features, different threads.
    pub fn with_threads(&self, participation: DMatrix<f64>, lengths: DVector<f64>) -> Result<Self> {
        Dataset::new(self.features.clone(), participation, lengths)
    }
}

fn iter_indexed(m: &DMatrix<f64>) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
    (0..m.nrows()).flat_map(move |r| (0..m.ncols()).map(move |c| ((r, c), m[(r, c)])))
}

/// Checks every dataset invariant and hands the dataset back unchanged.
pub fn validate_dataset(d: Dataset) -> Result<Dataset> {
    d.validate()?;
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureClusterParams {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorClusterParams {
    pub mean: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureHypers {
    pub mu0: DVector<f64>,
    pub r0: DMatrix<f64>,
    pub w0: DMatrix<f64>,
    pub beta0: f64,
}

impl FeatureHypers {
    pub fn validate(&self) -> Result<()> {
        let d = self.mu0.len();
        if self.r0.shape() != (d, d) || self.w0.shape() != (d, d) {
            return Err(Error::DimensionMismatch(
                "feature hyperparameter shapes".into(),
            ));
        }
        if !(self.beta0 > d as f64 - 1.0) {
            return Err(Error::InvalidParameter(format!(
                "feature beta0 {} must exceed D - 1 = {}",
                self.beta0,
                d as f64 - 1.0
            )));
        }
        spd_cholesky(&self.r0, "R0")?;
        spd_cholesky(&self.w0, "W0")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorHypers {
    pub mu0: f64,
    pub r0: f64,
    pub w0: f64,
    pub beta0: f64,
}

impl BehaviorHypers {
    pub fn validate(&self) -> Result<()> {
        if self.r0 > 0.0 && self.w0 > 0.0 && self.beta0 > 0.0 && self.mu0.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "behavior hyperparameters {self:?}"
            )))
        }
    }
}

/// Data-driven quantities that centre the hyperpriors.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMoments {
    pub feat_mean: DVector<f64>,
    pub feat_cov: DMatrix<f64>,
    pub coef_mle: DVector<f64>,
    pub coef_mle_mean: f64,
    pub coef_mle_var: f64,
    pub length_var: f64,
}

/// Sample moments of the features, ridge estimates of the coefficients and
/// the sample variance of the lengths.
///
/// The coefficient estimate is `(P Pᵀ + λI)⁻¹ P y`, the ridge solution for
/// the design `Pᵀ`.
pub fn empirical_moments(d: &Dataset, lambda: f64) -> Result<DataMoments> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ridge lambda must be positive, got {lambda}"
        )));
    }
    let (u, dim) = d.features.shape();
    let t = d.n_threads();
    if t == 0 {
        return Err(Error::NoThreads);
    }
    if u < 2 {
        return Err(Error::Degenerate(
            "at least two users are needed for sample moments".into(),
        ));
    }

    let feat_mean = d.features.row_mean().transpose();
    let mut feat_cov = DMatrix::<f64>::zeros(dim, dim);
    for r in 0..u {
        let c = d.features.row(r).transpose() - &feat_mean;
        feat_cov += &c * c.transpose();
    }
    feat_cov /= (u - 1) as f64;
    for k in 0..dim {
        if feat_cov[(k, k)] <= 0.0 {
            return Err(Error::DegenerateFeature(k));
        }
    }

    let coef_mle = ridge_coefficients(&d.participation, &d.lengths, lambda)?;
    let coef_mle_mean = coef_mle.mean();
    let coef_mle_var = coef_mle
        .iter()
        .map(|b| (b - coef_mle_mean).powi(2))
        .sum::<f64>()
        / (u - 1) as f64;
    if !(coef_mle_var > 0.0) {
        return Err(Error::Degenerate(
            "coefficient estimates have zero variance".into(),
        ));
    }
    if t < 2 {
        return Err(Error::Degenerate(
            "at least two threads are needed for the length variance".into(),
        ));
    }
    let y_mean = d.lengths.mean();
    let length_var = d.lengths.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / (t - 1) as f64;
    if !(length_var > 0.0) {
        return Err(Error::Degenerate(
            "thread lengths have zero variance".into(),
        ));
    }

    Ok(DataMoments {
        feat_mean,
        feat_cov,
        coef_mle,
        coef_mle_mean,
        coef_mle_var,
        length_var,
    })
}

/// `(P Pᵀ + λI)⁻¹ P y`.
pub fn ridge_coefficients(p: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let u = p.nrows();
    let gram = p * p.transpose() + DMatrix::identity(u, u) * lambda;
    let rhs = p * y;
    Ok(spd_cholesky(&gram, "ridge gram")?.solve(&rhs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModelVariant {
    /// Number of clusters inferred through the CRP prior.
    DualDp,
    /// Fixed number of components under a symmetric Dirichlet prior.
    DualFixed(usize),
    /// One cluster; the feature view cannot influence the coefficients.
    Single,
}

impl ModelVariant {
    pub fn fixed_components(&self) -> Option<usize> {
        match self {
            ModelVariant::DualDp => None,
            ModelVariant::DualFixed(k) => Some(*k),
            ModelVariant::Single => Some(1),
        }
    }

    pub fn uses_feature_view(&self) -> bool {
        !matches!(self, ModelVariant::Single)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelVariant::DualDp => write!(f, "dual-dp"),
            ModelVariant::DualFixed(k) => write!(f, "dual-fixed:{k}"),
            ModelVariant::Single => write!(f, "single"),
        }
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "dual-dp" | "dualdp" => Ok(ModelVariant::DualDp),
            "single" => Ok(ModelVariant::Single),
            _ => {
                let k = s
                    .strip_prefix("dual-fixed:")
                    .or_else(|| s.strip_prefix("dualfixed:"))
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!("unknown model variant '{s}'"))
                    })?;
                let k: usize = k.parse().map_err(|_| {
                    Error::InvalidParameter(format!("bad component count in '{s}'"))
                })?;
                if k == 0 {
                    return Err(Error::InvalidParameter("dual-fixed needs K >= 1".into()));
                }
                Ok(ModelVariant::DualFixed(k))
            }
        }
    }
}

impl From<ModelVariant> for String {
    fn from(v: ModelVariant) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for ModelVariant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One snapshot of every latent variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// 0-based cluster label per user.
    pub assignments: Vec<usize>,
    pub feature_params: Vec<FeatureClusterParams>,
    pub behavior_params: Vec<BehaviorClusterParams>,
    pub coefficients: DVector<f64>,
    pub noise_precision: f64,
    pub feature_hypers: FeatureHypers,
    pub behavior_hypers: BehaviorHypers,
    pub alpha: f64,
}

impl ModelState {
    pub fn n_clusters(&self) -> usize {
        self.feature_params.len()
    }

    pub fn n_occupied(&self) -> usize {
        self.counts().iter().filter(|&&c| c > 0).count()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_clusters()];
        for &z in &self.assignments {
            counts[z] += 1;
        }
        counts
    }

    pub fn members(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &z)| z == k)
            .map(|(u, _)| u)
    }

    /// Checks state invariants. `allow_empty` admits persistent empty
    /// components (fixed-K models).
    pub fn validate(&self, allow_empty: bool) -> Result<()> {
        let c = self.n_clusters();
        if self.behavior_params.len() != c {
            return Err(Error::DimensionMismatch(format!(
                "{} feature clusters but {} behavior clusters",
                c,
                self.behavior_params.len()
            )));
        }
        if self.coefficients.len() != self.assignments.len() {
            return Err(Error::DimensionMismatch(
                "coefficients vs assignments".into(),
            ));
        }
        if let Some(&z) = self.assignments.iter().find(|&&z| z >= c) {
            return Err(Error::InvalidParameter(format!(
                "assignment {z} refers to no cluster ({c} active)"
            )));
        }
        if !allow_empty {
            if let Some(k) = self.counts().iter().position(|&n| n == 0) {
                return Err(Error::InvalidParameter(format!("cluster {k} is empty")));
            }
        }
        if !(self.noise_precision > 0.0) || !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter(
                "noise precision and alpha must be positive".into(),
            ));
        }
        if self.behavior_params.iter().any(|p| !(p.precision > 0.0)) {
            return Err(Error::InvalidParameter(
                "behavior precision must be positive".into(),
            ));
        }
        self.feature_hypers.validate()?;
        self.behavior_hypers.validate()
    }

    /// Drops empty clusters and relabels the rest in order of first
    /// appearance, so equal partitions always carry equal labels.
    pub fn compact(&mut self) {
        let mut map = vec![usize::MAX; self.n_clusters()];
        let mut order = Vec::new();
        for z in self.assignments.iter_mut() {
            if map[*z] == usize::MAX {
                map[*z] = order.len();
                order.push(*z);
            }
            *z = map[*z];
        }
        self.feature_params = order
            .iter()
            .map(|&k| self.feature_params[k].clone())
            .collect();
        self.behavior_params = order.iter().map(|&k| self.behavior_params[k]).collect();
    }
}

/// Quantities derived once from a dataset and reused on every sweep.
#[derive(Debug, Clone)]
pub struct PreparedData<'a> {
    pub dataset: &'a Dataset,
    pub rows: Vec<DVector<f64>>,
    /// `P Pᵀ`.
    pub gram: DMatrix<f64>,
    /// `P y`.
    pub py: DVector<f64>,
}

impl<'a> PreparedData<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        let p = &dataset.participation;
        PreparedData {
            dataset,
            rows: (0..dataset.n_users())
                .map(|u| dataset.features.row(u).transpose())
                .collect(),
            gram: p * p.transpose(),
            py: p * &dataset.lengths,
        }
    }
}
