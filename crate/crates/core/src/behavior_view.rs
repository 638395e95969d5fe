//! Behavior view: latent per-user coefficients explaining thread lengths,
//! drawn from a mixture of one-dimensional Gaussians.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::LN_2;

use crate::ars::{ars_sample, bracketing_abscissae, LogDensity};
use crate::dists::{
    digamma_remainder, ln_gamma_remainder, log_normal_pdf, sample_normal_precision, GammaPaper,
    MAX_DOF,
};
use crate::error::{Error, Result};
use crate::linalg::{spd_cholesky, symmetrize};
use crate::model::{BehaviorClusterParams, BehaviorHypers, DataMoments, ModelState, PreparedData};

/// Gaussian posterior of the coefficient vector in precision form.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPosteriorPieces {
    /// `Λ′`.
    pub precision: DMatrix<f64>,
    /// `μ′`.
    pub mean: DVector<f64>,
}

fn coefficient_system(
    state: &ModelState,
    data: &PreparedData,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let u = data.rows.len();
    if state.assignments.len() != u || data.gram.nrows() != u {
        return Err(Error::DimensionMismatch(format!(
            "{} assignments for {} users",
            state.assignments.len(),
            u
        )));
    }
    let s_y = state.noise_precision;
    let mut precision = &data.gram * s_y;
    let mut rhs = &data.py * s_y;
    for (i, &z) in state.assignments.iter().enumerate() {
        let p = state.behavior_params[z];
        precision[(i, i)] += p.precision;
        rhs[i] += p.precision * p.mean;
    }
    Ok((symmetrize(&precision), rhs))
}

pub fn coefficient_posterior(
    state: &ModelState,
    data: &PreparedData,
) -> Result<CoefficientPosteriorPieces> {
    let (precision, rhs) = coefficient_system(state, data)?;
    let mean = spd_cholesky(&precision, "coefficient posterior precision")?.solve(&rhs);
    Ok(CoefficientPosteriorPieces { precision, mean })
}

/// One joint draw of every user's coefficient: a single Cholesky of `Λ′`,
/// a solve for the mean and a back-substitution for the noise.
pub fn sample_coefficients<R: Rng + ?Sized>(
    state: &ModelState,
    data: &PreparedData,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (precision, rhs) = coefficient_system(state, data)?;
    let chol = spd_cholesky(&precision, "coefficient posterior precision")?;
    let mean = chol.solve(&rhs);
    let eps = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    let offset = chol
        .l_dirty()
        .tr_solve_lower_triangular(&eps)
        .ok_or_else(|| Error::NotPositiveDefinite("coefficient posterior precision".into()))?;
    Ok(mean + offset)
}

/// Posterior `(mean, precision)` of a component mean given its precision.
pub fn component_mean_conditional(
    members: &[f64],
    precision: f64,
    h: &BehaviorHypers,
) -> (f64, f64) {
    let post_prec = h.r0 + members.len() as f64 * precision;
    let mean = (h.r0 * h.mu0 + precision * members.iter().sum::<f64>()) / post_prec;
    (mean, post_prec)
}

/// Posterior Gamma of a component precision given its mean.
pub fn component_precision_conditional(
    members: &[f64],
    mean: f64,
    h: &BehaviorHypers,
) -> Result<GammaPaper> {
    let ss: f64 = members.iter().map(|b| (b - mean) * (b - mean)).sum();
    GammaPaper::new(h.beta0 + members.len() as f64, 1.0 / (h.beta0 * h.w0 + ss))
}

/// Precision given the current mean, then the mean given the new precision.
pub fn sample_behavior_cluster_params<R: Rng + ?Sized>(
    member_coefs: &[f64],
    current_mean: f64,
    h: &BehaviorHypers,
    rng: &mut R,
) -> Result<BehaviorClusterParams> {
    let precision = component_precision_conditional(member_coefs, current_mean, h)?.sample(rng);
    let (m, p) = component_mean_conditional(member_coefs, precision, h);
    Ok(BehaviorClusterParams {
        mean: sample_normal_precision(m, p, rng),
        precision,
    })
}

/// Parameters of a fresh component drawn from the base distribution.
pub fn sample_behavior_prior<R: Rng + ?Sized>(
    h: &BehaviorHypers,
    rng: &mut R,
) -> Result<BehaviorClusterParams> {
    let precision = GammaPaper::new(h.beta0, 1.0 / (h.beta0 * h.w0))?.sample(rng);
    Ok(BehaviorClusterParams {
        mean: sample_normal_precision(h.mu0, h.r0, rng),
        precision,
    })
}

/// Posterior `(mean, precision)` of `μ0`.
pub fn hyper_mean_conditional(
    params: &[BehaviorClusterParams],
    m: &DataMoments,
    h: &BehaviorHypers,
) -> (f64, f64) {
    let k = params.len() as f64;
    let data_prec = 1.0 / m.coef_mle_var;
    let post_prec = data_prec + k * h.r0;
    let sum_means: f64 = params.iter().map(|p| p.mean).sum();
    (
        (data_prec * m.coef_mle_mean + h.r0 * sum_means) / post_prec,
        post_prec,
    )
}

/// Posterior Gamma of `r0`, whose prior `G(1, σ_b̂⁻²)` contributes `σ_b̂²` to
/// the inverse scale.
pub fn hyper_precision_conditional(
    params: &[BehaviorClusterParams],
    m: &DataMoments,
    mu0: f64,
) -> Result<GammaPaper> {
    let ss: f64 = params.iter().map(|p| (p.mean - mu0) * (p.mean - mu0)).sum();
    GammaPaper::new(1.0 + params.len() as f64, 1.0 / (m.coef_mle_var + ss))
}

/// Posterior Gamma of `w0`.
pub fn hyper_variance_conditional(
    params: &[BehaviorClusterParams],
    m: &DataMoments,
    beta0: f64,
) -> Result<GammaPaper> {
    let sum_prec: f64 = params.iter().map(|p| p.precision).sum();
    GammaPaper::new(
        1.0 + params.len() as f64 * beta0,
        1.0 / (1.0 / m.coef_mle_var + beta0 * sum_prec),
    )
}

/// Log-posterior of `y = ln β0` for the behavior view, with `1/β0 ~ G(1, 1)`.
///
/// Evaluated as `y − K·g(β/2) − 1/(2β) − (3/2)(y − ln 2) + (β/2)·Σ_k(1 + ln(s_k w0) − s_k w0)`
/// with `g(x) = lnΓ(x) − x ln x + x`, which equals the textbook form term by
/// term but stays accurate when `β0` is large and `s_k w0` is close to 1.
#[derive(Debug, Clone)]
pub struct BehaviorDofTarget {
    pub n_components: f64,
    /// `Σ_k (1 + ln(s_k w0) − s_k w0)`, never positive.
    pub deficit: f64,
}

impl BehaviorDofTarget {
    pub fn new(params: &[BehaviorClusterParams], w0: f64) -> Self {
        let deficit = params
            .iter()
            .map(|p| {
                let sw = p.precision * w0;
                let e = sw - 1.0;
                if e.abs() < 0.5 {
                    e.ln_1p() - e
                } else {
                    sw.ln() - e
                }
            })
            .sum();
        BehaviorDofTarget {
            n_components: params.len() as f64,
            deficit,
        }
    }
}

impl LogDensity for BehaviorDofTarget {
    fn ln_density(&self, y: f64) -> f64 {
        let beta = y.exp();
        y - self.n_components * ln_gamma_remainder(beta / 2.0) - 0.5 / beta - 1.5 * (y - LN_2)
            + beta / 2.0 * self.deficit
    }

    fn d_ln_density(&self, y: f64) -> f64 {
        let beta = y.exp();
        1.0 - self.n_components * digamma_remainder(beta / 2.0) * beta / 2.0 + 0.5 / beta - 1.5
            + beta / 2.0 * self.deficit
    }

    fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, MAX_DOF.ln())
    }
}

pub fn sample_behavior_dof<R: Rng + ?Sized>(
    params: &[BehaviorClusterParams],
    w0: f64,
    current: f64,
    rng: &mut R,
) -> Result<f64> {
    let target = BehaviorDofTarget::new(params, w0);
    let wrap = |source| Error::ArsTarget {
        target: "behavior beta0",
        source,
    };
    let init = bracketing_abscissae(&target, current.ln()).map_err(wrap)?;
    Ok(ars_sample(&target, &init, rng).map_err(wrap)?.exp())
}

/// Updates `μ0, r0, w0, β0` in that order.
pub fn sample_behavior_hypers<R: Rng + ?Sized>(
    params: &[BehaviorClusterParams],
    m: &DataMoments,
    h: &BehaviorHypers,
    rng: &mut R,
) -> Result<BehaviorHypers> {
    if params.is_empty() {
        return Err(Error::InvalidParameter(
            "behavior hyperparameters need at least one component".into(),
        ));
    }
    let (mean, prec) = hyper_mean_conditional(params, m, h);
    let mu0 = sample_normal_precision(mean, prec, rng);
    let r0 = hyper_precision_conditional(params, m, mu0)?.sample(rng);
    let w0 = hyper_variance_conditional(params, m, h.beta0)?.sample(rng);
    let beta0 = sample_behavior_dof(params, w0, h.beta0, rng)?;
    Ok(BehaviorHypers { mu0, r0, w0, beta0 })
}

pub fn sample_behavior_hypers_prior<R: Rng + ?Sized>(
    m: &DataMoments,
    rng: &mut R,
) -> Result<BehaviorHypers> {
    let mu0 = sample_normal_precision(m.coef_mle_mean, 1.0 / m.coef_mle_var, rng);
    let r0 = GammaPaper::new(1.0, 1.0 / m.coef_mle_var)?.sample(rng);
    let w0 = GammaPaper::new(1.0, m.coef_mle_var)?.sample(rng);
    let beta0 = 1.0 / GammaPaper::new(1.0, 1.0)?.sample(rng);
    Ok(BehaviorHypers { mu0, r0, w0, beta0 })
}

/// `GammaPaper(1 + T, [σ0² + Σ_t (y_t − p_tᵀ b)²]⁻¹)`.
pub fn noise_precision_conditional(
    data: &PreparedData,
    b: &DVector<f64>,
    m: &DataMoments,
) -> Result<GammaPaper> {
    let d = data.dataset;
    if b.len() != d.n_users() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for {} users",
            b.len(),
            d.n_users()
        )));
    }
    let resid = &d.lengths - d.participation.tr_mul(b);
    GammaPaper::new(
        1.0 + d.n_threads() as f64,
        1.0 / (m.length_var + resid.norm_squared()),
    )
}

pub fn sample_noise_precision<R: Rng + ?Sized>(
    data: &PreparedData,
    b: &DVector<f64>,
    m: &DataMoments,
    rng: &mut R,
) -> Result<f64> {
    Ok(noise_precision_conditional(data, b, m)?.sample(rng))
}

/// `ln N(b | μ_k, 1/s_k)`.
pub fn behavior_loglik(b: f64, p: &BehaviorClusterParams) -> f64 {
    log_normal_pdf(b, p.mean, p.precision)
}
