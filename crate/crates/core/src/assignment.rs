//! Cluster-assignment resampling with Neal's auxiliary-component scheme, the
//! finite Dirichlet alternative, and the concentration parameter.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ars::{ars_sample, bracketing_abscissae, LogDensity};
use crate::behavior_view::behavior_loglik;
use crate::dists::{sample_mvn_precision, GammaPaper, WishartPaper};
use crate::error::{Error, Result};
use crate::feature_view::FeatureKernel;
use crate::linalg::spd_inverse;
use crate::model::{
    BehaviorClusterParams, FeatureClusterParams, ModelState, ModelVariant, PreparedData,
};

pub const DEFAULT_AUXILIARY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentConfig {
    pub m_aux: usize,
    pub variant: ModelVariant,
    /// Score assignments with the feature likelihood.
    pub feature_likelihood: bool,
    /// Score assignments with the coefficient likelihood.
    pub behavior_likelihood: bool,
}

impl AssignmentConfig {
    pub fn new(variant: ModelVariant) -> Self {
        AssignmentConfig {
            m_aux: DEFAULT_AUXILIARY,
            variant,
            feature_likelihood: variant.uses_feature_view(),
            behavior_likelihood: true,
        }
    }

    /// Both likelihoods switched off, leaving only the partition prior.
    pub fn prior_only(variant: ModelVariant) -> Self {
        AssignmentConfig {
            feature_likelihood: false,
            behavior_likelihood: false,
            ..Self::new(variant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_aux == 0 {
            return Err(Error::InvalidParameter("m_aux must be at least 1".into()));
        }
        if self.variant.fixed_components() == Some(0) {
            return Err(Error::InvalidParameter(
                "fixed component count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Unnormalised log CRP weight: `ln n_k` for an existing cluster, `ln α` for
/// a new one (`k = None`).
pub fn crp_log_prior(counts_without_u: &[usize], alpha: f64, k: Option<usize>) -> f64 {
    match k {
        Some(k) => (counts_without_u.get(k).copied().unwrap_or(0) as f64).ln(),
        None => alpha.ln(),
    }
}

/// `ln((α/K + n_−k) / (α + U − 1))` with `U − 1 = Σ counts_without_u`.
pub fn finite_log_prior(
    counts_without_u: &[usize],
    alpha: f64,
    n_components: usize,
    k: usize,
) -> Result<f64> {
    if k >= n_components || counts_without_u.len() > n_components {
        return Err(Error::InvalidParameter(format!(
            "component {k} out of range for K = {n_components}"
        )));
    }
    let others: usize = counts_without_u.iter().sum();
    let n_k = counts_without_u.get(k).copied().unwrap_or(0) as f64;
    Ok(((alpha / n_components as f64 + n_k) / (alpha + others as f64)).ln())
}

/// Samples an index with probability proportional to `exp(log_weights)`.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Degenerate(format!(
            "no finite assignment weight (max {max})"
        )));
    }
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if target < *wi {
            return Ok(i);
        }
        target -= wi;
    }
    Ok(w.iter().rposition(|&x| x > 0.0).unwrap_or(0))
}

/// Base distribution for fresh components, factorised once per sweep.
struct BaseMeasure {
    feature_precision: WishartPaper,
    feature_mean: nalgebra::DVector<f64>,
    feature_mean_precision: DMatrix<f64>,
    behavior_precision: GammaPaper,
    behavior_mean: f64,
    behavior_mean_precision: f64,
}

impl BaseMeasure {
    fn new(state: &ModelState) -> Result<Self> {
        let f = &state.feature_hypers;
        let b = &state.behavior_hypers;
        Ok(BaseMeasure {
            feature_precision: WishartPaper::new(
                f.beta0,
                spd_inverse(&(&f.w0 * f.beta0), "beta0 W0")?,
            )?,
            feature_mean: f.mu0.clone(),
            feature_mean_precision: f.r0.clone(),
            behavior_precision: GammaPaper::new(b.beta0, 1.0 / (b.beta0 * b.w0))?,
            behavior_mean: b.mu0,
            behavior_mean_precision: b.r0,
        })
    }

    fn draw<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<(FeatureClusterParams, BehaviorClusterParams)> {
        let precision = self.feature_precision.sample(rng);
        let mean = sample_mvn_precision(&self.feature_mean, &self.feature_mean_precision, rng)?;
        let s = self.behavior_precision.sample(rng);
        let m = crate::dists::sample_normal_precision(
            self.behavior_mean,
            self.behavior_mean_precision,
            rng,
        );
        Ok((
            FeatureClusterParams { mean, precision },
            BehaviorClusterParams {
                mean: m,
                precision: s,
            },
        ))
    }
}

/// Reusable state for one pass over the users: base measure and cached
/// feature kernels aligned with the state's clusters.
pub struct AssignmentSweep {
    base: BaseMeasure,
    kernels: Vec<FeatureKernel>,
}

impl AssignmentSweep {
    pub fn new(state: &ModelState) -> Result<Self> {
        let kernels = state
            .feature_params
            .iter()
            .map(FeatureKernel::new)
            .collect::<Result<_>>()?;
        Ok(AssignmentSweep {
            base: BaseMeasure::new(state)?,
            kernels,
        })
    }

    fn log_lik(
        &self,
        cfg: &AssignmentConfig,
        data: &PreparedData,
        u: usize,
        kernel: &FeatureKernel,
        b: f64,
        bp: &BehaviorClusterParams,
    ) -> f64 {
        let mut l = 0.0;
        if cfg.feature_likelihood {
            l += kernel.loglik(&data.rows[u]);
        }
        if cfg.behavior_likelihood {
            l += behavior_loglik(b, bp);
        }
        l
    }

    /// Resamples `z_u` in place.
    pub fn resample<R: Rng + ?Sized>(
        &mut self,
        u: usize,
        state: &mut ModelState,
        data: &PreparedData,
        cfg: &AssignmentConfig,
        rng: &mut R,
    ) -> Result<()> {
        match cfg.variant {
            ModelVariant::Single => Ok(()),
            ModelVariant::DualFixed(k) => self.resample_finite(u, k, state, data, cfg, rng),
            ModelVariant::DualDp => self.resample_dp(u, state, data, cfg, rng),
        }
    }

    fn resample_finite<R: Rng + ?Sized>(
        &mut self,
        u: usize,
        n_components: usize,
        state: &mut ModelState,
        data: &PreparedData,
        cfg: &AssignmentConfig,
        rng: &mut R,
    ) -> Result<()> {
        if state.n_clusters() != n_components {
            return Err(Error::InvalidParameter(format!(
                "fixed model expects {n_components} components, state has {}",
                state.n_clusters()
            )));
        }
        let mut counts = state.counts();
        counts[state.assignments[u]] -= 1;
        let b = state.coefficients[u];
        let mut logw = Vec::with_capacity(n_components);
        for k in 0..n_components {
            let prior = finite_log_prior(&counts, state.alpha, n_components, k)?;
            logw.push(
                prior + self.log_lik(cfg, data, u, &self.kernels[k], b, &state.behavior_params[k]),
            );
        }
        state.assignments[u] = sample_log_categorical(&logw, rng)?;
        Ok(())
    }

    fn resample_dp<R: Rng + ?Sized>(
        &mut self,
        u: usize,
        state: &mut ModelState,
        data: &PreparedData,
        cfg: &AssignmentConfig,
        rng: &mut R,
    ) -> Result<()> {
        let old = state.assignments[u];
        let mut counts = state.counts();
        counts[old] -= 1;

        let mut aux = Vec::with_capacity(cfg.m_aux);
        if counts[old] == 0 {
            let fp = state.feature_params.remove(old);
            let bp = state.behavior_params.remove(old);
            let kernel = self.kernels.remove(old);
            counts.remove(old);
            for z in state.assignments.iter_mut() {
                if *z > old {
                    *z -= 1;
                }
            }
            aux.push((fp, bp, kernel));
        }
        while aux.len() < cfg.m_aux {
            let (fp, bp) = self.base.draw(rng)?;
            let kernel = FeatureKernel::new(&fp)?;
            aux.push((fp, bp, kernel));
        }

        let b = state.coefficients[u];
        let active = counts.len();
        let mut logw = Vec::with_capacity(active + aux.len());
        for k in 0..active {
            logw.push(
                crp_log_prior(&counts, state.alpha, Some(k))
                    + self.log_lik(cfg, data, u, &self.kernels[k], b, &state.behavior_params[k]),
            );
        }
        let aux_prior = (state.alpha / cfg.m_aux as f64).ln();
        for (_, bp, kernel) in &aux {
            logw.push(aux_prior + self.log_lik(cfg, data, u, kernel, b, bp));
        }

        let choice = sample_log_categorical(&logw, rng)?;
        if choice < active {
            state.assignments[u] = choice;
        } else {
            let (fp, bp, kernel) = aux.swap_remove(choice - active);
            state.feature_params.push(fp);
            state.behavior_params.push(bp);
            self.kernels.push(kernel);
            state.assignments[u] = active;
        }
        Ok(())
    }
}

/// Resamples one user's assignment. Sweeps should reuse an
/// [`AssignmentSweep`] instead.
pub fn resample_assignment<R: Rng + ?Sized>(
    u: usize,
    state: &mut ModelState,
    data: &PreparedData,
    cfg: &AssignmentConfig,
    rng: &mut R,
) -> Result<()> {
    AssignmentSweep::new(state)?.resample(u, state, data, cfg, rng)
}

/// Resamples every assignment in ascending user order.
pub fn sweep_assignments<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &PreparedData,
    cfg: &AssignmentConfig,
    rng: &mut R,
) -> Result<()> {
    if matches!(cfg.variant, ModelVariant::Single) {
        return Ok(());
    }
    let mut sweep = AssignmentSweep::new(state)?;
    for u in 0..state.assignments.len() {
        sweep.resample(u, state, data, cfg, rng)?;
    }
    Ok(())
}

/// Log-posterior of `y = ln α` given `K` occupied clusters among `U` users,
/// with `1/α ~ G(1, 1)`, including the Jacobian of the log transform.
/// `lnΓ(α) − lnΓ(α + U)` is evaluated as `−Σ_{i<U} ln(α + i)`.
#[derive(Debug, Clone, Copy)]
pub struct AlphaTarget {
    pub n_clusters: f64,
    pub n_users: usize,
}

impl LogDensity for AlphaTarget {
    fn ln_density(&self, y: f64) -> f64 {
        let a = y.exp();
        let rising: f64 = (1..self.n_users).map(|i| (a + i as f64).ln()).sum();
        y * (self.n_clusters - 1.5) - 0.5 / a - rising
    }

    fn d_ln_density(&self, y: f64) -> f64 {
        let a = y.exp();
        let rising: f64 = (1..self.n_users).map(|i| a / (a + i as f64)).sum();
        (self.n_clusters - 1.5) + 0.5 / a - rising
    }
}

pub fn resample_alpha<R: Rng + ?Sized>(
    n_clusters: usize,
    n_users: usize,
    alpha_old: f64,
    rng: &mut R,
) -> Result<f64> {
    if n_clusters == 0 || n_users == 0 {
        return Err(Error::InvalidParameter(format!(
            "alpha needs at least one cluster and user, got {n_clusters} and {n_users}"
        )));
    }
    let target = AlphaTarget {
        n_clusters: n_clusters as f64,
        n_users,
    };
    let wrap = |source| Error::ArsTarget {
        target: "alpha",
        source,
    };
    let init = bracketing_abscissae(&target, alpha_old.ln()).map_err(wrap)?;
    Ok(ars_sample(&target, &init, rng).map_err(wrap)?.exp())
}
