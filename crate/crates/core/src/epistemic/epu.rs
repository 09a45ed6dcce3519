//! Entropy of soft cluster assignments as an epistemic uncertainty score.

use ndarray::{Array2, ArrayView1, ArrayView3};
use serde::Serialize;

use super::dec::ClusterModel;
use crate::error::{Error, Result};

/// Per-sample assignment entropies and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EpUReport {
    pub per_sample_entropy: Vec<f64>,
    pub epu: f64,
    pub n: usize,
    pub assignment_probs: Array2<f64>,
}

#[derive(Serialize)]
struct EpUJson<'a> {
    epu: f64,
    n: usize,
    entropies: &'a [f64],
}

impl EpUReport {
    pub fn from_assignments(assignment_probs: Array2<f64>) -> Result<Self> {
        let n = assignment_probs.nrows();
        if n == 0 {
            return Err(Error::invalid("EpU", "no samples"));
        }
        let per_sample_entropy: Vec<f64> = assignment_probs.outer_iter().map(entropy).collect();
        let epu = per_sample_entropy.iter().sum::<f64>() / n as f64;
        Ok(Self {
            per_sample_entropy,
            epu,
            n,
            assignment_probs,
        })
    }

    /// `{"epu": .., "n": .., "entropies": [..]}`
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&EpUJson {
            epu: self.epu,
            n: self.n,
            entropies: &self.per_sample_entropy,
        })
        .expect("report serializes")
    }

    /// One `index,entropy` row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,entropy\n");
        for (i, e) in self.per_sample_entropy.iter().enumerate() {
            out.push_str(&format!("{i},{e}\n"));
        }
        out
    }
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
pub fn entropy(p: ArrayView1<'_, f64>) -> f64 {
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    h.max(0.0)
}

/// Scores forecasts with one encoder pass each; the forecaster is not called.
pub fn epu_score(model: &ClusterModel, forecasts: &[ArrayView3<'_, f32>]) -> Result<EpUReport> {
    let expected = model.autoencoder().input_shape();
    for f in forecasts {
        if f.dim() != expected {
            return Err(Error::shape(
                "EpU input",
                &[expected.0, expected.1, expected.2],
                f.shape(),
            ));
        }
    }
    EpUReport::from_assignments(model.soft_assign(forecasts)?)
}
