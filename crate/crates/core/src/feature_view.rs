//! Feature view: Gaussian components over observed user features with
//! Normal–Wishart priors and data-centred hyperpriors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::f64::consts::LN_2;

use crate::ars::{ars_sample, bracketing_abscissae, LogDensity};
use crate::dists::{
    digamma_remainder, ln_gamma_remainder, log_mvn_pdf, sample_mvn_precision, GammaPaper,
    WishartPaper, MAX_DOF,
};
use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, outer, spd_cholesky, spd_inverse, symmetrize};
use crate::model::{DataMoments, FeatureClusterParams, FeatureHypers};

/// Posterior `(mean, precision)` of a component mean given its precision.
pub fn component_mean_conditional(
    members: &[&DVector<f64>],
    precision: &DMatrix<f64>,
    h: &FeatureHypers,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = members.len() as f64;
    let sum = sum_vectors(members, h.mu0.len());
    let post_prec = symmetrize(&(&h.r0 + precision * n));
    let rhs = &h.r0 * &h.mu0 + precision * sum;
    let mean = spd_cholesky(&post_prec, "component mean posterior precision")?.solve(&rhs);
    Ok((mean, post_prec))
}

/// Posterior Wishart of a component precision given its mean.
pub fn component_precision_conditional(
    members: &[&DVector<f64>],
    mean: &DVector<f64>,
    h: &FeatureHypers,
) -> Result<WishartPaper> {
    let mut scatter = &h.w0 * h.beta0;
    for a in members {
        scatter += outer(&(*a - mean));
    }
    let scale = spd_inverse(&scatter, "scatter").map_err(|_| Error::SingularScatter)?;
    WishartPaper::new(h.beta0 + members.len() as f64, scale)
}

pub fn sample_component_mean<R: Rng + ?Sized>(
    members: &[&DVector<f64>],
    precision: &DMatrix<f64>,
    h: &FeatureHypers,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (mean, prec) = component_mean_conditional(members, precision, h)?;
    sample_mvn_precision(&mean, &prec, rng)
}

pub fn sample_component_precision<R: Rng + ?Sized>(
    members: &[&DVector<f64>],
    mean: &DVector<f64>,
    h: &FeatureHypers,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    Ok(component_precision_conditional(members, mean, h)?.sample(rng))
}

/// One sub-sweep for a component: precision given the current mean, then the
/// mean given the new precision. With no members both are prior draws.
pub fn sample_feature_cluster_params<R: Rng + ?Sized>(
    members: &[&DVector<f64>],
    current_mean: &DVector<f64>,
    h: &FeatureHypers,
    rng: &mut R,
) -> Result<FeatureClusterParams> {
    let precision = sample_component_precision(members, current_mean, h, rng)?;
    let mean = sample_component_mean(members, &precision, h, rng)?;
    Ok(FeatureClusterParams { mean, precision })
}

/// Parameters of a fresh component drawn from the base distribution.
pub fn sample_feature_prior<R: Rng + ?Sized>(
    h: &FeatureHypers,
    rng: &mut R,
) -> Result<FeatureClusterParams> {
    let precision =
        WishartPaper::new(h.beta0, spd_inverse(&(&h.w0 * h.beta0), "beta0 W0")?)?.sample(rng);
    let mean = sample_mvn_precision(&h.mu0, &h.r0, rng)?;
    Ok(FeatureClusterParams { mean, precision })
}

/// Posterior `(mean, precision)` of the shared mean `μ0`.
pub fn hyper_mean_conditional(
    params: &[FeatureClusterParams],
    m: &DataMoments,
    h: &FeatureHypers,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = params.len() as f64;
    let data_prec = spd_inverse(&m.feat_cov, "feature covariance")?;
    let mean_of_means = sum_vectors(
        &params.iter().map(|p| &p.mean).collect::<Vec<_>>(),
        h.mu0.len(),
    ) / k;
    let post_prec = symmetrize(&(&data_prec + &h.r0 * k));
    let rhs = &data_prec * &m.feat_mean + &h.r0 * mean_of_means * k;
    let mean = spd_cholesky(&post_prec, "mu0 posterior precision")?.solve(&rhs);
    Ok((mean, post_prec))
}

/// Posterior Wishart of the shared precision `R0`.
pub fn hyper_precision_conditional(
    params: &[FeatureClusterParams],
    m: &DataMoments,
    mu0: &DVector<f64>,
) -> Result<WishartPaper> {
    let d = mu0.len() as f64;
    let mut inv_scale = &m.feat_cov * d;
    for p in params {
        inv_scale += outer(&(&p.mean - mu0));
    }
    WishartPaper::new(
        d + params.len() as f64,
        spd_inverse(&inv_scale, "R0 posterior")?,
    )
}

/// Posterior Wishart of the shared covariance `W0`.
pub fn hyper_covariance_conditional(
    params: &[FeatureClusterParams],
    m: &DataMoments,
    beta0: f64,
) -> Result<WishartPaper> {
    let d = m.feat_mean.len() as f64;
    let mut inv_scale = spd_inverse(&m.feat_cov, "feature covariance")? * d;
    for p in params {
        inv_scale += &p.precision * beta0;
    }
    WishartPaper::new(
        d + params.len() as f64 * beta0,
        spd_inverse(&inv_scale, "W0 posterior")?,
    )
}

/// Log-posterior of `y = ln β0` for the feature view, where the prior is
/// `1/(β0 − D + 1) ~ G(1, 1/D)` and the components' precisions are Wishart
/// with `β0` degrees of freedom.
///
/// With `x_d = (β + d − D)/2`, `c_d = (d − D)/2` and `g(x) = lnΓ(x) − x ln x + x`
/// the Gamma and power terms are regrouped as
/// `−K Σ_d [g(x_d) + c_d (y − ln 2) + x_d ln(1 + 2c_d/β) − c_d] + (β/2) Σ_k (D + ln|S_k W0| − tr(S_k W0))`,
/// an exact identity that avoids cancellation when `β0` is large.
#[derive(Debug, Clone)]
pub struct FeatureDofTarget {
    pub n_components: f64,
    pub dim: usize,
    /// `Σ_k (D + ln(|S_k| |W0|) − tr(S_k W0))`, never positive.
    pub deficit: f64,
}

impl FeatureDofTarget {
    pub fn new(params: &[FeatureClusterParams], w0: &DMatrix<f64>) -> Result<Self> {
        let w_logdet = chol_logdet(&spd_cholesky(w0, "W0")?);
        let d = w0.nrows() as f64;
        let mut deficit = 0.0;
        for p in params {
            let logdet =
                chol_logdet(&spd_cholesky(&p.precision, "component precision")?) + w_logdet;
            deficit += d + logdet - (&p.precision * w0).trace();
        }
        Ok(FeatureDofTarget {
            n_components: params.len() as f64,
            dim: w0.nrows(),
            deficit,
        })
    }

    fn offsets(&self) -> impl Iterator<Item = f64> {
        let d = self.dim as f64;
        (1..=self.dim).map(move |j| (j as f64 - d) / 2.0)
    }
}

impl LogDensity for FeatureDofTarget {
    fn ln_density(&self, y: f64) -> f64 {
        let d = self.dim as f64;
        let beta = y.exp();
        let excess = beta - d + 1.0;
        if !(excess > 0.0) {
            return f64::NEG_INFINITY;
        }
        let l = y - LN_2;
        let gammas: f64 = self
            .offsets()
            .map(|c| {
                let x = beta / 2.0 + c;
                ln_gamma_remainder(x) + c * l + x * (2.0 * c / beta).ln_1p() - c
            })
            .sum();
        y - self.n_components * gammas - d / (2.0 * excess) - 1.5 * excess.ln()
            + beta / 2.0 * self.deficit
    }

    fn d_ln_density(&self, y: f64) -> f64 {
        let d = self.dim as f64;
        let beta = y.exp();
        let excess = beta - d + 1.0;
        let gammas: f64 = self
            .offsets()
            .map(|c| beta / 2.0 * (digamma_remainder(beta / 2.0 + c) + (2.0 * c / beta).ln_1p()))
            .sum();
        1.0 - self.n_components * gammas + d * beta / (2.0 * excess * excess) - 1.5 * beta / excess
            + beta / 2.0 * self.deficit
    }

    fn domain(&self) -> (f64, f64) {
        let lo = if self.dim >= 2 {
            ((self.dim - 1) as f64).ln()
        } else {
            f64::NEG_INFINITY
        };
        (lo, MAX_DOF.ln())
    }
}

pub fn sample_feature_dof<R: Rng + ?Sized>(
    params: &[FeatureClusterParams],
    w0: &DMatrix<f64>,
    current: f64,
    rng: &mut R,
) -> Result<f64> {
    let target = FeatureDofTarget::new(params, w0)?;
    let wrap = |source| Error::ArsTarget {
        target: "feature beta0",
        source,
    };
    let init = bracketing_abscissae(&target, current.ln()).map_err(wrap)?;
    Ok(ars_sample(&target, &init, rng).map_err(wrap)?.exp())
}

/// Draws `β0` from its prior: `β0 = D − 1 + 1/x` with `x ~ G(1, 1/D)`.
pub fn sample_feature_dof_prior<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<f64> {
    let d = dim as f64;
    let x = GammaPaper::new(1.0, 1.0 / d)?.sample(rng);
    Ok(d - 1.0 + 1.0 / x)
}

/// Updates `μ0, R0, W0, β0` in that order, each given the newest values.
pub fn sample_feature_hypers<R: Rng + ?Sized>(
    params: &[FeatureClusterParams],
    m: &DataMoments,
    h: &FeatureHypers,
    rng: &mut R,
) -> Result<FeatureHypers> {
    if params.is_empty() {
        return Err(Error::InvalidParameter(
            "feature hyperparameters need at least one component".into(),
        ));
    }
    let (mean, prec) = hyper_mean_conditional(params, m, h)?;
    let mu0 = sample_mvn_precision(&mean, &prec, rng)?;
    let r0 = hyper_precision_conditional(params, m, &mu0)?.sample(rng);
    let w0 = hyper_covariance_conditional(params, m, h.beta0)?.sample(rng);
    let beta0 = sample_feature_dof(params, &w0, h.beta0, rng)?;
    Ok(FeatureHypers { mu0, r0, w0, beta0 })
}

/// Draws every feature hyperparameter from its hyperprior.
pub fn sample_feature_hypers_prior<R: Rng + ?Sized>(
    m: &DataMoments,
    rng: &mut R,
) -> Result<FeatureHypers> {
    let dim = m.feat_mean.len();
    let d = dim as f64;
    let mu0 = sample_mvn_precision(
        &m.feat_mean,
        &spd_inverse(&m.feat_cov, "feature covariance")?,
        rng,
    )?;
    let r0 = WishartPaper::new(d, spd_inverse(&(&m.feat_cov * d), "D Σa")?)?.sample(rng);
    let w0 = WishartPaper::new(d, &m.feat_cov / d)?.sample(rng);
    let beta0 = sample_feature_dof_prior(dim, rng)?;
    Ok(FeatureHypers { mu0, r0, w0, beta0 })
}

/// `ln N(a | μ_k, S_k⁻¹)`.
pub fn feature_loglik(a: &DVector<f64>, p: &FeatureClusterParams) -> Result<f64> {
    log_mvn_pdf(a, &p.mean, &p.precision)
}

/// A component's feature likelihood with its Cholesky factor cached, for
/// repeated evaluation during an assignment sweep.
#[derive(Debug, Clone)]
pub struct FeatureKernel {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl FeatureKernel {
    pub fn new(p: &FeatureClusterParams) -> Result<Self> {
        let chol = spd_cholesky(&p.precision, "component precision")?;
        let d = p.mean.len() as f64;
        Ok(FeatureKernel {
            mean: p.mean.clone(),
            log_norm: 0.5 * (chol_logdet(&chol) - d * (2.0 * std::f64::consts::PI).ln()),
            chol_l: chol.l(),
        })
    }

    pub fn loglik(&self, a: &DVector<f64>) -> f64 {
        let diff = a - &self.mean;
        self.log_norm - 0.5 * self.chol_l.tr_mul(&diff).norm_squared()
    }
}

fn sum_vectors(vs: &[&DVector<f64>], dim: usize) -> DVector<f64> {
    vs.iter().fold(DVector::zeros(dim), |acc, v| acc + *v)
}
