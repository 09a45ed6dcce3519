//! Density-peaks statistics and automatic cluster-count selection.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::tsne::Reducer2d;
use crate::error::{Error, Result};
use crate::nn::stream_rng;

/// How the cut-off distance `d_c` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    /// Quantile in `(0, 1)` of all pairwise planar distances.
    Quantile(f64),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateKConfig {
    pub cutoff: Cutoff,
    /// Upper bound on K; `None` means `min(32, N / 10)`.
    pub k_max: Option<usize>,
    /// Larger inputs are subsampled (seeded) before reduction.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for EstimateKConfig {
    fn default() -> Self {
        Self {
            cutoff: Cutoff::Quantile(0.02),
            k_max: None,
            max_points: 1500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityStats {
    pub embedding_2d: Array2<f64>,
    pub rho: Vec<usize>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub d_c: f64,
    /// Gap ratios `gamma_(i) / (gamma_(i+1) + eps)` over sorted gamma,
    /// for `i = 1..=k_max`.
    pub ratios: Vec<f64>,
}

const RATIO_EPS: f64 = 1e-12;

fn distance(p: ArrayView2<'_, f64>, i: usize, j: usize) -> f64 {
    p.row(i)
        .iter()
        .zip(p.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; values.len()]
    }
}

/// `rho`, `delta` and `gamma` of planar points. Density ties are broken by
/// index, so exactly one point (the first densest) takes its maximum
/// distance as `delta`.
pub fn density_stats(points: ArrayView2<'_, f64>, cutoff: Cutoff) -> Result<DensityStats> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::invalid(
            "density statistics",
            "need at least 2 points",
        ));
    }
    let mut dist = Array2::zeros((n, n));
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance(points, i, j);
            dist[[i, j]] = d;
            dist[[j, i]] = d;
            pairs.push(d);
        }
    }
    pairs.sort_by(f64::total_cmp);
    if *pairs.last().expect("n >= 2") == 0.0 {
        return Err(Error::DegenerateGeometry("all points coincide".into()));
    }
    let d_c = match cutoff {
        Cutoff::Fixed(d) if d > 0.0 => d,
        Cutoff::Quantile(q) if q > 0.0 && q < 1.0 => {
            let d = pairs[((pairs.len() - 1) as f64 * q).floor() as usize];
            if d > 0.0 {
                d
            } else {
                *pairs
                    .iter()
                    .find(|&&v| v > 0.0)
                    .expect("some positive distance")
            }
        }
        other => {
            return Err(Error::invalid(
                "cut-off",
                format!("{other:?} is not a valid cut-off"),
            ))
        }
    };
    let rho: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && dist[[i, j]] < d_c).count())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rho[b].cmp(&rho[a]).then(a.cmp(&b)));
    let mut delta = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        delta[i] = if rank == 0 {
            (0..n).map(|j| dist[[i, j]]).fold(0.0, f64::max)
        } else {
            order[..rank]
                .iter()
                .map(|&j| dist[[i, j]])
                .fold(f64::INFINITY, f64::min)
        };
    }
    let rho_n = min_max(&rho.iter().map(|&r| r as f64).collect::<Vec<_>>());
    let delta_n = min_max(&delta);
    let gamma = rho_n.iter().zip(&delta_n).map(|(r, d)| r * d).collect();
    Ok(DensityStats {
        embedding_2d: points.to_owned(),
        rho,
        delta,
        gamma,
        d_c,
        ratios: Vec::new(),
    })
}

/// Default search bound `min(32, N / 10)`, kept within `[1, N - 1]`.
pub fn default_k_max(n: usize) -> usize {
    (n / 10).min(32).max(1).min(n.saturating_sub(1).max(1))
}

/// Picks `K = argmax_i gamma_(i) / (gamma_(i+1) + eps)` over `1 <= i <= k_max`
/// on gamma sorted in descending order. Returns `(K, ratios)`.
pub fn select_k(gamma: &[f64], k_max: usize) -> Result<(usize, Vec<f64>)> {
    if gamma.len() < 2 {
        return Err(Error::invalid(
            "cluster-count selection",
            "need at least 2 gamma values",
        ));
    }
    let mut sorted = gamma.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let upper = k_max.clamp(1, sorted.len() - 1);
    let ratios: Vec<f64> = (0..upper)
        .map(|i| sorted[i] / (sorted[i + 1] + RATIO_EPS))
        .collect();
    let mut best = 0;
    for (i, r) in ratios.iter().enumerate() {
        if *r > ratios[best] {
            best = i;
        }
    }
    Ok((best + 1, ratios))
}

/// Cluster count for uncertainty scoring. A single cluster makes every
/// assignment entropy zero, so when the estimate is 1 this falls back to the
/// largest gap ratio among `i >= 2`.
pub fn scoring_k(estimated: usize, ratios: &[f64]) -> usize {
    if estimated >= 2 || ratios.len() < 2 {
        return estimated.max(1);
    }
    let mut best = 1;
    for i in 2..ratios.len() {
        if ratios[i] > ratios[best] {
            best = i;
        }
    }
    best + 1
}

/// Estimates the number of clusters in latent codes `z`.
pub fn estimate_k(
    z: ArrayView2<'_, f64>,
    cfg: &EstimateKConfig,
    reducer: &dyn Reducer2d,
) -> Result<(usize, DensityStats)> {
    let n = z.nrows();
    if n < 3 {
        return Err(Error::invalid("estimate_k", "need at least 3 points"));
    }
    let first = z.row(0);
    if z.outer_iter().all(|r| r == first) {
        return Err(Error::DegenerateGeometry(
            "all latent codes are identical".into(),
        ));
    }
    let points = if n > cfg.max_points {
        let mut idx = sample(&mut stream_rng(cfg.seed, 0xDE), n, cfg.max_points).into_vec();
        idx.sort_unstable();
        z.select(ndarray::Axis(0), &idx)
    } else {
        z.to_owned()
    };
    let planar = reducer.reduce(points.view())?;
    let mut stats = density_stats(planar.view(), cfg.cutoff)?;
    let k_max = cfg.k_max.unwrap_or_else(|| default_k_max(points.nrows()));
    let (k, ratios) = select_k(&stats.gamma, k_max)?;
    stats.ratios = ratios;
    Ok((k, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epistemic::tsne::FirstTwo;
    use ndarray::arr2;

    #[test]
    fn all_pairs_within_cutoff_give_full_density() {
        let pts = arr2(&[[0.0, 0.0], [1.0, 0.0], [2.5, 0.0]]);
        let s = density_stats(pts.view(), Cutoff::Fixed(10.0)).unwrap();
        assert_eq!(s.rho, vec![2, 2, 2]);
        assert_eq!(s.delta[0], 2.5);
        assert_eq!(s.delta[1], 1.0);
        assert_eq!(s.delta[2], 1.5);
    }

    #[test]
    fn densest_point_takes_max_distance() {
        let pts = arr2(&[[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0]]);
        let s = density_stats(pts.view(), Cutoff::Fixed(0.5)).unwrap();
        let top = (0..4)
            .max_by(|&a, &b| s.rho[a].cmp(&s.rho[b]).then(b.cmp(&a)))
            .unwrap();
        let far = (0..4)
            .map(|j| distance(pts.view(), top, j))
            .fold(0.0, f64::max);
        assert_eq!(s.delta[top], far);
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let pts = Array2::from_elem((5, 3), 1.5);
        assert!(matches!(
            estimate_k(pts.view(), &EstimateKConfig::default(), &FirstTwo),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn select_k_uses_largest_gap() {
        let (k, ratios) = select_k(&[0.9, 1.0, 0.95, 0.01, 0.02, 0.015], 4).unwrap();
        assert_eq!(k, 3);
        assert_eq!(ratios.len(), 4);
    }

    #[test]
    fn scoring_k_skips_a_single_cluster() {
        assert_eq!(scoring_k(3, &[1.0, 5.0, 2.0]), 3);
        assert_eq!(scoring_k(1, &[9.0, 2.0, 4.0, 1.5]), 3);
        assert_eq!(scoring_k(1, &[9.0]), 1);
    }

    #[test]
    fn k_max_bounds() {
        assert_eq!(default_k_max(3), 1);
        assert_eq!(default_k_max(600), 32);
        assert_eq!(default_k_max(100), 10);
    }
}
