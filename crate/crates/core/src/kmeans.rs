//! Lloyd's k-means with k-means++ seeding, used to initialise chains.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_RESTARTS: usize = 20;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centers: Vec<DVector<f64>>,
    /// Within-cluster sum of squares.
    pub inertia: f64,
}

/// Best of `restarts` Lloyd runs by inertia. Labels are renumbered by first
/// appearance so equal partitions compare equal.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[DVector<f64>],
    k: usize,
    restarts: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<KMeansFit> {
    if k == 0 || k > points.len() {
        return Err(Error::TooManyClusters { k, n: points.len() });
    }
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(points, k, max_iter, rng);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    let mut fit = best.expect("at least one restart");
    relabel(&mut fit);
    Ok(fit)
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared()
}

fn nearest(p: &DVector<f64>, centers: &[DVector<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(p, c)))
        .fold(
            (0, f64::INFINITY),
            |acc, x| if x.1 < acc.1 { x } else { acc },
        )
}

fn seed_plus_plus<R: Rng + ?Sized>(
    points: &[DVector<f64>],
    k: usize,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if t < *w {
                    chosen = i;
                    break;
                }
                t -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[idx].clone());
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn lloyd<R: Rng + ?Sized>(
    points: &[DVector<f64>],
    k: usize,
    max_iter: usize,
    rng: &mut R,
) -> KMeansFit {
    let dim = points[0].len();
    let mut centers = seed_plus_plus(points, k, rng);
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let (j, _) = nearest(p, &centers);
            if *l != j {
                *l = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![DVector::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l] += p;
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = &sums[j] / counts[j] as f64;
            } else {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centers[labels[i]])))
                    .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
                    .0;
                centers[j] = points[far].clone();
                labels[far] = j;
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    KMeansFit {
        labels,
        centers,
        inertia,
    }
}

fn relabel(fit: &mut KMeansFit) {
    let mut map = vec![usize::MAX; fit.centers.len()];
    let mut order = Vec::new();
    for l in fit.labels.iter_mut() {
        if map[*l] == usize::MAX {
            map[*l] = order.len();
            order.push(*l);
        }
        *l = map[*l];
    }
    for (j, m) in map.iter_mut().enumerate() {
        if *m == usize::MAX {
            *m = order.len();
            order.push(j);
        }
    }
    fit.centers = order.iter().map(|&j| fit.centers[j].clone()).collect();
}
