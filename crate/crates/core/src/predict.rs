//! Posterior-predictive thread lengths and test-set scoring.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::dists::{log_normal_pdf, sample_normal_precision};
use crate::error::{Error, Result};
use crate::gibbs::Chain;

/// Per-sample predictive locations `p_tᵀ b⁽ⁱ⁾` (threads × samples) and the
/// matching noise precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveComponents {
    pub locations: DMatrix<f64>,
    pub precisions: Vec<f64>,
}

impl PredictiveComponents {
    /// Uses every post-burn-in record.
    pub fn from_chain(chain: &Chain, p_test: &DMatrix<f64>) -> Result<Self> {
        let records = chain.retained()?;
        let coefs: Vec<&DVector<f64>> = records.iter().map(|r| &r.state.coefficients).collect();
        let precisions = records.iter().map(|r| r.state.noise_precision).collect();
        Self::new(&coefs, precisions, p_test)
    }

    pub fn new(
        coefficients: &[&DVector<f64>],
        precisions: Vec<f64>,
        p_test: &DMatrix<f64>,
    ) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::EmptyChain);
        }
        let u = coefficients[0].len();
        if p_test.nrows() != u || coefficients.iter().any(|b| b.len() != u) {
            return Err(Error::DimensionMismatch(format!(
                "test participation has {} users, chain has {u}",
                p_test.nrows()
            )));
        }
        if precisions.len() != coefficients.len() || precisions.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter(
                "one positive noise precision per sample is required".into(),
            ));
        }
        let b = DMatrix::from_columns(
            &coefficients
                .iter()
                .map(|b| (*b).clone())
                .collect::<Vec<_>>(),
        );
        Ok(PredictiveComponents {
            locations: p_test.tr_mul(&b),
            precisions,
        })
    }

    pub fn n_threads(&self) -> usize {
        self.locations.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.precisions.len()
    }

    /// `ln[(1/N) Σ_i N(y | loc_ti, 1/s_i)]` by log-sum-exp.
    pub fn log_density(&self, t: usize, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .precisions
            .iter()
            .enumerate()
            .map(|(i, &s)| log_normal_pdf(y, self.locations[(t, i)], s))
            .collect();
        log_mean_exp(&terms)
    }
}

pub fn log_mean_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|l| (l - max).exp()).sum::<f64>().ln() - (terms.len() as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveSummary {
    pub mean: Vec<f64>,
    pub lo50: Vec<f64>,
    pub hi50: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
    /// Present when true lengths were supplied.
    pub nll_per_thread: Option<Vec<f64>>,
    pub nll_total: Option<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Predictive means (exact mixture means), central 50% and 95% intervals
/// from one draw per sample and thread, and optionally the per-thread
/// negative log predictive density.
pub fn summarize_predictive<R: Rng + ?Sized>(
    comps: &PredictiveComponents,
    y_test: Option<&DVector<f64>>,
    rng: &mut R,
) -> Result<PredictiveSummary> {
    let t_count = comps.n_threads();
    if let Some(y) = y_test {
        if y.len() != t_count {
            return Err(Error::DimensionMismatch(format!(
                "{} lengths for {t_count} threads",
                y.len()
            )));
        }
    }
    let n = comps.n_samples();
    let mut s = PredictiveSummary {
        mean: Vec::with_capacity(t_count),
        lo50: Vec::with_capacity(t_count),
        hi50: Vec::with_capacity(t_count),
        lo95: Vec::with_capacity(t_count),
        hi95: Vec::with_capacity(t_count),
        nll_per_thread: y_test.map(|_| Vec::with_capacity(t_count)),
        nll_total: None,
    };
    let mut draws = vec![0.0; n];
    for t in 0..t_count {
        let row = comps.locations.row(t);
        s.mean.push(row.sum() / n as f64);
        for (i, d) in draws.iter_mut().enumerate() {
            *d = sample_normal_precision(row[i], comps.precisions[i], rng);
        }
        draws.sort_by(|a, b| a.total_cmp(b));
        s.lo50.push(quantile(&draws, 0.25));
        s.hi50.push(quantile(&draws, 0.75));
        s.lo95.push(quantile(&draws, 0.025));
        s.hi95.push(quantile(&draws, 0.975));
        if let (Some(y), Some(nll)) = (y_test, s.nll_per_thread.as_mut()) {
            nll.push(-comps.log_density(t, y[t]));
        }
    }
    s.nll_total = s.nll_per_thread.as_ref().map(|v| v.iter().sum());
    Ok(s)
}

pub fn predict_lengths<R: Rng + ?Sized>(
    chain: &Chain,
    p_test: &DMatrix<f64>,
    y_test: Option<&DVector<f64>>,
    rng: &mut R,
) -> Result<PredictiveSummary> {
    summarize_predictive(
        &PredictiveComponents::from_chain(chain, p_test)?,
        y_test,
        rng,
    )
}

/// `−Σ_t ln[(1/N) Σ_i N(y_t | p_tᵀ b⁽ⁱ⁾, 1/s_y⁽ⁱ⁾)]` over post-burn-in samples.
pub fn negative_loglik(chain: &Chain, p_test: &DMatrix<f64>, y_test: &DVector<f64>) -> Result<f64> {
    let comps = PredictiveComponents::from_chain(chain, p_test)?;
    nll_of(&comps, y_test)
}

pub fn nll_of(comps: &PredictiveComponents, y_test: &DVector<f64>) -> Result<f64> {
    if y_test.len() != comps.n_threads() {
        return Err(Error::DimensionMismatch(format!(
            "{} lengths for {} threads",
            y_test.len(),
            comps.n_threads()
        )));
    }
    Ok(-(0..comps.n_threads())
        .map(|t| comps.log_density(t, y_test[t]))
        .sum::<f64>())
}

/// Writes `thread_id, y_true, mean, lo50, hi50, lo95, hi95, nll` with 1-based
/// thread ids; `y_true` and `nll` are empty when no lengths were given.
pub fn write_predictions_csv(
    path: &Path,
    s: &PredictiveSummary,
    y_test: Option<&DVector<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "thread_id",
        "y_true",
        "mean",
        "lo50",
        "hi50",
        "lo95",
        "hi95",
        "nll",
    ])?;
    for t in 0..s.mean.len() {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            (t + 1).to_string(),
            opt(y_test.map(|y| y[t])),
            s.mean[t].to_string(),
            s.lo50[t].to_string(),
            s.hi50[t].to_string(),
            s.lo95[t].to_string(),
            s.hi95[t].to_string(),
            opt(s.nll_per_thread.as_ref().map(|n| n[t])),
        ])?;
    }
    w.flush()?;
    Ok(())
}
