//! Partition summaries: co-clustering probabilities, Dahl's least-squares
//! clustering and the adjusted Rand index.

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gibbs::Chain;

pub const MAX_PAIRWISE_USERS: usize = 2000;

/// Posterior probability that each pair of users shares a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMatrix {
    pub probs: DMatrix<f64>,
}

/// Co-clustering frequencies over a set of partitions. Counts are integers
/// divided by a common denominator, so symmetry and the unit diagonal are
/// exact.
pub fn pairwise_from_partitions(partitions: &[&[usize]]) -> Result<PairwiseMatrix> {
    let first = partitions.first().ok_or(Error::EmptyChain)?;
    let u = first.len();
    if u > MAX_PAIRWISE_USERS {
        return Err(Error::TooManyUsers(u));
    }
    if partitions.iter().any(|p| p.len() != u) {
        return Err(Error::DimensionMismatch(
            "partitions of different sizes".into(),
        ));
    }
    let mut counts = vec![0u32; u * u];
    for z in partitions {
        for i in 0..u {
            for j in i..u {
                if z[i] == z[j] {
                    counts[i * u + j] += 1;
                }
            }
        }
    }
    let n = partitions.len() as f64;
    let probs = DMatrix::from_fn(u, u, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        counts[a * u + b] as f64 / n
    });
    Ok(PairwiseMatrix { probs })
}

fn retained_partitions(chain: &Chain) -> Result<Vec<&[usize]>> {
    Ok(chain
        .retained()?
        .into_iter()
        .map(|r| r.state.assignments.as_slice())
        .collect())
}

pub fn pairwise_matrix(chain: &Chain) -> Result<PairwiseMatrix> {
    pairwise_from_partitions(&retained_partitions(chain)?)
}

/// `Σ_ij (δ_ij(z) − π̂_ij)²`.
pub fn least_squares_loss(z: &[usize], pm: &PairwiseMatrix) -> f64 {
    let u = z.len();
    let mut loss = 0.0;
    for i in 0..u {
        for j in 0..u {
            let delta = if z[i] == z[j] { 1.0 } else { 0.0 };
            let d = delta - pm.probs[(i, j)];
            loss += d * d;
        }
    }
    loss
}

#[derive(Debug, Clone, PartialEq)]
pub struct DahlClustering {
    /// Index of the winning partition among those considered.
    pub index: usize,
    pub labels: Vec<usize>,
    pub loss: f64,
}

/// The candidate partition closest to `pm` in squared error; the earliest
/// wins ties.
pub fn dahl_from_partitions(
    partitions: &[&[usize]],
    pm: &PairwiseMatrix,
) -> Result<DahlClustering> {
    let mut best: Option<DahlClustering> = None;
    for (i, z) in partitions.iter().enumerate() {
        if z.len() != pm.probs.nrows() {
            return Err(Error::DimensionMismatch(
                "partition and pairwise matrix sizes differ".into(),
            ));
        }
        let loss = least_squares_loss(z, pm);
        if best.as_ref().is_none_or(|b| loss < b.loss) {
            best = Some(DahlClustering {
                index: i,
                labels: z.to_vec(),
                loss,
            });
        }
    }
    best.ok_or(Error::EmptyChain)
}

pub fn dahl_clustering(chain: &Chain, pm: &PairwiseMatrix) -> Result<DahlClustering> {
    dahl_from_partitions(&retained_partitions(chain)?, pm)
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Hubert–Arabie adjusted Rand index. Two identical partitions score 1 even
/// in the degenerate cases where the usual ratio is 0/0.
pub fn adjusted_rand_index<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} labels",
            a.len(),
            b.len()
        )));
    }
    let mut table: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as u64);
    let expected = if total > 0.0 {
        sum_a * sum_b / total
    } else {
        0.0
    };
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-12 {
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Renumbers labels `0, 1, …` by first appearance.
pub fn canonical_labels<T: Eq + Hash + Copy>(z: &[T]) -> Vec<usize> {
    let mut map = HashMap::new();
    z.iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}
