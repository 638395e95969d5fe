//! MCMC quality checks: autocorrelation time, effective sample size, the
//! Geweke z-score and cluster-count summaries.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gibbs::Chain;

pub const MAX_LAG: usize = 1000;

fn mean_and_centered(series: &[f64]) -> Result<(f64, Vec<f64>, f64)> {
    if series.len() < 2 {
        return Err(Error::Degenerate("series needs at least two values".into()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let c: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let ss: f64 = c.iter().map(|x| x * x).sum();
    if !(ss > 0.0) || !ss.is_finite() {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((mean, c, ss))
}

/// Lag-`n` sample autocorrelations for `n = 1..=max_lag`.
pub fn autocorrelations(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let (_, c, ss) = mean_and_centered(series)?;
    let lags = max_lag.min(c.len() - 1);
    Ok((1..=lags)
        .map(|k| {
            c[..c.len() - k]
                .iter()
                .zip(&c[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / ss
        })
        .collect())
}

/// `τ = 1 + 2 Σ_n |ρ_n|` over lags up to `min(1000, N−1)`, stopping at the
/// first lag whose autocorrelation lies inside the white-noise band
/// `|ρ_n| < 2/√N`.
pub fn autocorrelation_time(series: &[f64]) -> Result<f64> {
    let band = 2.0 / (series.len() as f64).sqrt();
    let rho = autocorrelations(series, MAX_LAG)?;
    Ok(1.0
        + 2.0
            * rho
                .iter()
                .map(|r| r.abs())
                .take_while(|r| *r >= band)
                .sum::<f64>())
}

/// `(N − burn_in) / τ` of the post-burn-in slice.
pub fn effective_sample_size(series: &[f64], burn_in: usize) -> Result<f64> {
    let post = series.get(burn_in..).unwrap_or(&[]);
    if post.len() < 2 {
        return Err(Error::Degenerate(
            "fewer than two post-burn-in values".into(),
        ));
    }
    Ok(post.len() as f64 / autocorrelation_time(post)?)
}

/// Spectral density at zero with a Bartlett window of width `0.1·n`,
/// divided by `n`: the variance of the segment mean.
fn mean_variance(seg: &[f64]) -> Result<f64> {
    let (_, c, ss) = mean_and_centered(seg)?;
    let n = c.len();
    let width = ((0.1 * n as f64).floor() as usize).max(1).min(n - 1);
    let mut s0 = ss / n as f64;
    for k in 1..=width {
        let gamma = c[..n - k]
            .iter()
            .zip(&c[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64;
        s0 += 2.0 * (1.0 - k as f64 / (width + 1) as f64) * gamma;
    }
    Ok(s0.max(0.0) / n as f64)
}

/// Compares the means of the first `frac_a` and the last `frac_b` of the
/// series.
pub fn geweke_z(series: &[f64], frac_a: f64, frac_b: f64) -> Result<f64> {
    if series.len() < 100 {
        return Err(Error::Degenerate(format!(
            "geweke needs at least 100 values, got {}",
            series.len()
        )));
    }
    if !(frac_a > 0.0 && frac_b > 0.0 && frac_a + frac_b <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "bad segment fractions {frac_a}, {frac_b}"
        )));
    }
    let n = series.len();
    let na = ((frac_a * n as f64) as usize).max(2);
    let nb = ((frac_b * n as f64) as usize).max(2);
    let a = &series[..na];
    let b = &series[n - nb..];
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var = mean_variance(a)? + mean_variance(b)?;
    if !(var > 0.0) {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((mean(a) - mean(b)) / var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancyRank {
    /// 1 for the largest cluster of each sample.
    pub rank: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterCountSummary {
    /// Occupied-cluster count → fraction of retained samples.
    pub histogram: BTreeMap<usize, f64>,
    pub mode: usize,
    /// Size of the r-th largest cluster across samples.
    pub occupancy: Vec<OccupancyRank>,
}

pub fn cluster_count_histogram(chain: &Chain) -> Result<ClusterCountSummary> {
    let records = chain.retained()?;
    let sizes: Vec<Vec<usize>> = records
        .iter()
        .map(|r| {
            let mut c: Vec<usize> = r.state.counts().into_iter().filter(|&n| n > 0).collect();
            c.sort_unstable_by(|a, b| b.cmp(a));
            c
        })
        .collect();
    cluster_count_summary(&sizes)
}

/// Summary from per-sample occupied cluster sizes, each sorted descending.
pub fn cluster_count_summary(sizes: &[Vec<usize>]) -> Result<ClusterCountSummary> {
    if sizes.is_empty() {
        return Err(Error::EmptyChain);
    }
    let n = sizes.len() as f64;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for s in sizes {
        *counts.entry(s.len()).or_default() += 1;
    }
    let mode = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(k, _)| *k)
        .unwrap_or(0);
    let histogram = counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect();
    let max_rank = sizes.iter().map(|s| s.len()).max().unwrap_or(0);
    let occupancy = (0..max_rank)
        .map(|r| {
            let vals: Vec<f64> = sizes
                .iter()
                .map(|s| s.get(r).copied().unwrap_or(0) as f64)
                .collect();
            let m = vals.iter().sum::<f64>() / n;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            OccupancyRank {
                rank: r + 1,
                mean: m,
                std: v.sqrt(),
            }
        })
        .collect();
    Ok(ClusterCountSummary {
        histogram,
        mode,
        occupancy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableDiagnostics {
    pub tau: Option<f64>,
    pub ess: Option<f64>,
    pub geweke_z: Option<f64>,
    /// Why a statistic is missing, e.g. a constant series.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl VariableDiagnostics {
    pub fn of(series: &[f64]) -> Self {
        let tau = autocorrelation_time(series);
        let geweke = geweke_z(series, 0.1, 0.5);
        let note = match (&tau, &geweke) {
            (Err(e), _) | (_, Err(e)) => Some(e.to_string()),
            _ => None,
        };
        VariableDiagnostics {
            ess: tau.as_ref().ok().map(|t| series.len() as f64 / t),
            tau: tau.ok(),
            geweke_z: geweke.ok(),
            note,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub n_samples: usize,
    pub variables: BTreeMap<String, VariableDiagnostics>,
    pub cluster_counts: ClusterCountSummary,
}

/// Post-burn-in traces of the monitored scalars: `s_y`, `alpha`, `mu0_f`,
/// each `mu0_a[i]`, `b_mean` (average coefficient) and `n_clusters`.
pub fn monitored_series(chain: &Chain) -> Result<BTreeMap<String, Vec<f64>>> {
    let records = chain.retained()?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut push = |k: String, v: f64| out.entry(k).or_default().push(v);
    for r in &records {
        let s = &r.state;
        push("s_y".into(), s.noise_precision);
        push("alpha".into(), s.alpha);
        push("mu0_f".into(), s.behavior_hypers.mu0);
        for (i, m) in s.feature_hypers.mu0.iter().enumerate() {
            push(format!("mu0_a[{i}]"), *m);
        }
        push("b_mean".into(), s.coefficients.mean());
        push("n_clusters".into(), s.n_occupied() as f64);
    }
    Ok(out)
}

pub fn chain_diagnostics(chain: &Chain) -> Result<DiagnosticsReport> {
    let series = monitored_series(chain)?;
    let n_samples = series.values().next().map_or(0, |v| v.len());
    let variables = series
        .iter()
        .map(|(k, v)| (k.clone(), VariableDiagnostics::of(v)))
        .collect();
    Ok(DiagnosticsReport {
        n_samples,
        variables,
        cluster_counts: cluster_count_histogram(chain)?,
    })
}
