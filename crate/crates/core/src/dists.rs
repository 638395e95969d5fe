//! Samplers and log-densities in the model's own parametrisations.
//!
//! The Gamma and Wishart families are parametrised the way the model is
//! written down: `GammaPaper(α, β)` has density `∝ x^(α/2−1) exp(−x/(2β))`
//! and mean `αβ` (a one-dimensional Wishart), and `WishartPaper(υ, W)` has
//! mean `υW`. Conversions to the standard shape/scale parametrisation happen
//! only inside this module.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, spd_cholesky};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Upper truncation of the Gamma and Wishart degrees-of-freedom hyperparameters.
pub const MAX_DOF: f64 = 1e8;

const BARTLETT_FLOOR: f64 = 1e-10;

/// Independent, reproducible random stream `stream` under a root seed.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPaper {
    shape: f64,
    scale: f64,
}

impl GammaPaper {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma requires positive finite parameters, got ({shape}, {scale})"
            )));
        }
        Ok(GammaPaper { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.shape * self.scale * self.scale
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let k = self.shape / 2.0;
        let theta = 2.0 * self.scale;
        (k - 1.0) * x.ln() - x / theta - ln_gamma(k) - k * theta.ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Parameters were validated on construction.
        let g = Gamma::new(self.shape / 2.0, 2.0 * self.scale).expect("validated gamma");
        // Shapes far below one underflow to exactly zero; keep draws positive.
        g.sample(rng).max(f64::MIN_POSITIVE)
    }
}

pub fn sample_gamma_paper<R: Rng + ?Sized>(g: &GammaPaper, rng: &mut R) -> f64 {
    g.sample(rng)
}

#[derive(Debug, Clone)]
pub struct WishartPaper {
    dof: f64,
    scale: DMatrix<f64>,
    scale_chol_l: DMatrix<f64>,
}

impl WishartPaper {
    pub fn new(dof: f64, scale: DMatrix<f64>) -> Result<Self> {
        let dim = scale.nrows();
        if dim == 0 {
            return Err(Error::InvalidParameter("wishart scale is empty".into()));
        }
        if !(dof > dim as f64 - 1.0) || !dof.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "wishart degrees of freedom {dof} must exceed dim - 1 = {}",
                dim - 1
            )));
        }
        let chol = spd_cholesky(&scale, "wishart scale")?;
        Ok(WishartPaper {
            dof,
            scale_chol_l: chol.l(),
            scale,
        })
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn dim(&self) -> usize {
        self.scale.nrows()
    }

    pub fn mean(&self) -> DMatrix<f64> {
        &self.scale * self.dof
    }

    /// Bartlett decomposition: `X = L A Aᵀ Lᵀ` with `A` lower triangular,
    /// `A_ii² ~ χ²(υ − i)` and standard-normal entries below the diagonal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let d = self.dim();
        let mut a = DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            let chi2 = Gamma::new((self.dof - i as f64) / 2.0, 2.0).expect("validated dof");
            // Floored so the draw stays numerically SPD when the dof is barely above D − 1.
            a[(i, i)] = chi2.sample(rng).max(BARTLETT_FLOOR).sqrt();
            for j in 0..i {
                a[(i, j)] = StandardNormal.sample(rng);
            }
        }
        let la = &self.scale_chol_l * a;
        let x = &la * la.transpose();
        crate::linalg::symmetrize(&x)
    }

    /// Log density including the normalising constant.
    pub fn ln_pdf(&self, x: &DMatrix<f64>) -> Result<f64> {
        let d = self.dim() as f64;
        let x_chol = spd_cholesky(x, "wishart argument")?;
        let scale_chol = spd_cholesky(&self.scale, "wishart scale")?;
        let scale_inv = scale_chol.inverse();
        let trace = (scale_inv * x).trace();
        let mut ln_mvgamma = d * (d - 1.0) / 4.0 * PI.ln();
        for j in 0..self.dim() {
            ln_mvgamma += ln_gamma((self.dof - j as f64) / 2.0);
        }
        Ok((self.dof - d - 1.0) / 2.0 * chol_logdet(&x_chol)
            - trace / 2.0
            - self.dof * d / 2.0 * 2f64.ln()
            - self.dof / 2.0 * chol_logdet(&scale_chol)
            - ln_mvgamma)
    }
}

pub fn sample_wishart<R: Rng + ?Sized>(w: &WishartPaper, rng: &mut R) -> DMatrix<f64> {
    w.sample(rng)
}

/// `lnΓ(x) − (x ln x − x)`, accurate for large `x` where the direct
/// difference cancels.
pub fn ln_gamma_remainder(x: f64) -> f64 {
    if x < 20.0 {
        return ln_gamma(x) - x * x.ln() + x;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    0.5 * LN_2PI - 0.5 * x.ln()
        + r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 / 1680.0)))
}

/// Derivative of [`ln_gamma_remainder`]: `ψ(x) − ln x`.
pub fn digamma_remainder(x: f64) -> f64 {
    if x < 20.0 {
        return digamma(x) - x.ln();
    }
    let r = 1.0 / x;
    let r2 = r * r;
    -0.5 * r - r2 * (1.0 / 12.0 - r2 * (1.0 / 120.0 - r2 * (1.0 / 252.0 - r2 / 240.0)))
}

/// Draw from `Normal(mean, precision⁻¹)` without forming the covariance:
/// with `precision = L Lᵀ`, `x = mean + L⁻ᵀ ε`.
pub fn sample_mvn_precision<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if precision.nrows() != mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "mean has length {}, precision is {}x{}",
            mean.len(),
            precision.nrows(),
            precision.ncols()
        )));
    }
    let chol = spd_cholesky(precision, "normal precision")?;
    let eps = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    let offset = chol
        .l_dirty()
        .tr_solve_lower_triangular(&eps)
        .ok_or_else(|| Error::NotPositiveDefinite("normal precision".into()))?;
    Ok(mean + offset)
}

pub fn sample_normal_precision<R: Rng + ?Sized>(mean: f64, precision: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + z / precision.sqrt()
}

/// `ln N(x | mean, 1/precision)`.
pub fn log_normal_pdf(x: f64, mean: f64, precision: f64) -> f64 {
    let d = x - mean;
    0.5 * (precision.ln() - LN_2PI - precision * d * d)
}

/// `ln N(x | mean, precision⁻¹)`.
pub fn log_mvn_pdf(x: &DVector<f64>, mean: &DVector<f64>, precision: &DMatrix<f64>) -> Result<f64> {
    let chol = spd_cholesky(precision, "normal precision")?;
    let diff = x - mean;
    let z = chol.l().transpose() * &diff;
    let dim = x.len() as f64;
    Ok(0.5 * (chol_logdet(&chol) - dim * LN_2PI - z.norm_squared()))
}
