//! Reduction of latent codes to the plane before density-peaks analysis.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Reducer2d {
    /// Maps `(N, D)` points to `(N, 2)`.
    fn reduce(&self, points: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

/// Keeps the first two coordinates; for data that is already planar.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstTwo;

impl Reducer2d for FirstTwo {
    fn reduce(&self, points: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if points.ncols() < 2 {
            return Err(Error::shape(
                "planar points",
                &[points.nrows(), 2],
                points.shape(),
            ));
        }
        Ok(points.slice(ndarray::s![.., ..2]).to_owned())
    }
}

/// Exact t-SNE with a seeded initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tsne {
    pub perplexity: f64,
    pub iterations: usize,
    /// Gradient step; `None` picks `max(N / (4 * early_exaggeration), 50)`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for Tsne {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 500,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 100,
            seed: 0,
        }
    }
}

fn squared_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Row-conditional affinities with each row's bandwidth tuned by bisection
/// to the target perplexity.
fn conditional_affinities(d2: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = d2.nrows();
    let target = perplexity.ln();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
        let min_d = (0..n)
            .filter(|&j| j != i)
            .map(|j| d2[[i, j]])
            .fold(f64::INFINITY, f64::min);
        let mut row = vec![0.0; n];
        for _ in 0..64 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                if j == i {
                    row[j] = 0.0;
                    continue;
                }
                // shift by the nearest distance so the row never underflows
                let w = (-(d2[[i, j]] - min_d) * beta).exp();
                row[j] = w;
                sum += w;
                weighted += w * d2[[i, j]];
            }
            let entropy = sum.ln() + beta * (weighted / sum - min_d);
            if (entropy - target).abs() < 1e-5 {
                break;
            }
            if entropy > target {
                lo = beta;
                beta = if hi.is_finite() {
                    (beta + hi) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let sum: f64 = row.iter().sum();
        for j in 0..n {
            p[[i, j]] = row[j] / sum;
        }
    }
    p
}

impl Reducer2d for Tsne {
    fn reduce(&self, points: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let n = points.nrows();
        if n < 2 {
            return Err(Error::invalid("t-SNE input", "need at least 2 points"));
        }
        // scale-free: normalize by the mean squared distance
        let mut d2 = squared_distances(points);
        let mean = d2.sum() / (n * (n - 1)) as f64;
        if mean > 0.0 {
            d2.mapv_inplace(|v| v / mean);
        }
        let perplexity = self.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
        let cond = conditional_affinities(&d2, perplexity);
        // symmetrized joint affinities, upper triangle in row-major pair order
        let mut p = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                p.push(((cond[[i, j]] + cond[[j, i]]) / (2.0 * n as f64)).max(1e-12));
            }
        }

        let lr = self
            .learning_rate
            .unwrap_or_else(|| (n as f64 / (4.0 * self.early_exaggeration)).max(50.0));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0, 1e-4).expect("valid normal");
        let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
        let mut velocity = vec![0.0f64; 2 * n];
        let mut gains = vec![1.0f64; 2 * n];
        let mut num = vec![0.0f64; p.len()];
        let mut grad = vec![0.0f64; 2 * n];
        for iter in 0..self.iterations {
            let exaggeration = if iter < self.exaggeration_iters {
                self.early_exaggeration
            } else {
                1.0
            };
            let momentum = if iter < 250 { 0.5 } else { 0.8 };
            let mut total = 0.0;
            let mut k = 0;
            for i in 0..n {
                let (yi0, yi1) = (y[2 * i], y[2 * i + 1]);
                for j in (i + 1)..n {
                    let dx = yi0 - y[2 * j];
                    let dy = yi1 - y[2 * j + 1];
                    let v = 1.0 / (1.0 + dx * dx + dy * dy);
                    num[k] = v;
                    total += 2.0 * v;
                    k += 1;
                }
            }
            grad.fill(0.0);
            let mut k = 0;
            for i in 0..n {
                let (yi0, yi1) = (y[2 * i], y[2 * i + 1]);
                let (mut gx, mut gy) = (0.0, 0.0);
                for j in (i + 1)..n {
                    let q = (num[k] / total).max(1e-12);
                    let m = 4.0 * (exaggeration * p[k] - q) * num[k];
                    let fx = m * (yi0 - y[2 * j]);
                    let fy = m * (yi1 - y[2 * j + 1]);
                    gx += fx;
                    gy += fy;
                    grad[2 * j] -= fx;
                    grad[2 * j + 1] -= fy;
                    k += 1;
                }
                grad[2 * i] += gx;
                grad[2 * i + 1] += gy;
            }
            for ((g, v), gain) in grad.iter().zip(velocity.iter_mut()).zip(gains.iter_mut()) {
                *gain = if (*g > 0.0) != (*v > 0.0) {
                    *gain + 0.2
                } else {
                    (*gain * 0.8).max(0.01)
                };
                *v = momentum * *v - lr * *gain * g;
            }
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..n {
                y[2 * i] += velocity[2 * i];
                y[2 * i + 1] += velocity[2 * i + 1];
                mx += y[2 * i] / n as f64;
                my += y[2 * i + 1] / n as f64;
            }
            for i in 0..n {
                y[2 * i] -= mx;
                y[2 * i + 1] -= my;
            }
        }
        let y = Array2::from_shape_vec((n, 2), y).expect("planar shape");
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("t-SNE embedding"));
        }
        Ok(y)
    }
}
