//! Seeded k-means with k-means++ seeding.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::stream_rng;

/// Attempts made before an empty cluster is reported as an error.
pub const KMEANS_ATTEMPTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// 1-based attempt that succeeded.
    pub attempt: usize,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<'_, f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.outer_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn attempt(
    data: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> std::result::Result<KMeansResult, usize> {
    let (n, dim) = data.dim();
    let mut rng = stream_rng(seed, 0x4B);
    let mut centers = Array2::zeros((k, dim));
    centers.row_mut(0).assign(&data.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(data.row(i), centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&data.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), centers.row(c)));
        }
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let (best, _) = nearest(data.row(i), &centers);
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            let mut row = sums.row_mut(labels[i]);
            row += &data.row(i);
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(empty);
        }
        for c in 0..k {
            centers
                .row_mut(c)
                .assign(&(&sums.row(c) / counts[c] as f64));
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n)
        .map(|i| sq_dist(data.row(i), centers.row(labels[i])))
        .sum();
    Ok(KMeansResult {
        centers,
        labels,
        inertia,
        attempt: 0,
    })
}

/// Lloyd iterations from k-means++ seeds. An empty cluster triggers a reseed;
/// after [`KMEANS_ATTEMPTS`] failures the last empty cluster is reported.
pub fn kmeans(
    data: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KMeansResult> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(
            "k-means",
            format!("k = {k} with {n} points"),
        ));
    }
    let mut last_empty = 0;
    for a in 0..KMEANS_ATTEMPTS {
        match attempt(data, k, seed.wrapping_add(a as u64 * 0x1_0000), max_iter) {
            Ok(mut r) => {
                r.attempt = a + 1;
                return Ok(r);
            }
            Err(empty) => last_empty = empty,
        }
    }
    Err(Error::EmptyCluster {
        cluster: last_empty,
        attempts: KMEANS_ATTEMPTS,
    })
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn purity(clusters: &[usize], labels: &[u32]) -> f64 {
    use std::collections::HashMap;
    let mut table: HashMap<usize, HashMap<u32, usize>> = HashMap::new();
    for (&c, &l) in clusters.iter().zip(labels) {
        *table.entry(c).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = table
        .values()
        .map(|m| m.values().copied().max().unwrap_or(0))
        .sum();
    hits as f64 / clusters.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn recovers_two_obvious_groups() {
        let data = arr2(&[
            [0.0, 0.0],
            [0.1, 0.0],
            [0.0, 0.1],
            [9.0, 9.0],
            [9.1, 9.0],
            [9.0, 9.1],
        ]);
        let r = kmeans(data.view(), 2, 3, 100).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[0], r.labels[2]);
        assert_eq!(r.labels[3], r.labels[5]);
        assert_ne!(r.labels[0], r.labels[3]);
        assert!(r.inertia < 0.1);
    }

    #[test]
    fn duplicate_points_cannot_fill_every_cluster() {
        let data = Array2::from_elem((4, 2), 1.0);
        assert!(matches!(
            kmeans(data.view(), 2, 0, 10),
            Err(Error::EmptyCluster {
                attempts: KMEANS_ATTEMPTS,
                ..
            })
        ));
    }

    #[test]
    fn purity_counts_majorities() {
        assert_eq!(purity(&[0, 0, 1, 1], &[5, 5, 6, 6]), 1.0);
        assert_eq!(purity(&[0, 0, 0, 0], &[5, 5, 6, 6]), 0.5);
    }
}
