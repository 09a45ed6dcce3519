//! Sampling-based epistemic baselines: MC-dropout and deep ensembles.

use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::forecast::{Checkpoint, StTrans};
use crate::nn::{stream_rng, Mode};

#[derive(Debug, Clone, PartialEq)]
pub struct SpreadEstimate {
    /// Mean over (t, j) of the per-cell standard deviation, in mm.
    pub value: f64,
    pub forward_passes: usize,
    /// Set when the method cannot produce spread (e.g. dropout rate 0).
    pub degenerate: bool,
}

/// Per-cell standard deviation `sqrt(mean_r |p_r - mean|^2)` over runs,
/// averaged over all (t, j) cells.
pub fn mean_cell_std(preds: &[Array3<f32>]) -> Result<f64> {
    let first = preds
        .first()
        .ok_or_else(|| Error::invalid("spread", "no predictions"))?;
    let (t, j, _) = first.dim();
    if let Some(bad) = preds.iter().find(|p| p.dim() != first.dim()) {
        return Err(Error::shape("spread input", first.shape(), bad.shape()));
    }
    let r = preds.len() as f64;
    let mut total = 0.0;
    for tt in 0..t {
        for jj in 0..j {
            let mut mean = [0.0f64; 3];
            for p in preds {
                for a in 0..3 {
                    mean[a] += p[[tt, jj, a]] as f64 / r;
                }
            }
            let var: f64 = preds
                .iter()
                .map(|p| {
                    (0..3)
                        .map(|a| (p[[tt, jj, a]] as f64 - mean[a]).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / r;
            total += var.sqrt();
        }
    }
    Ok(total / (t * j) as f64)
}

/// `passes` stochastic forward passes with dropout active.
pub fn mc_dropout_uncertainty(
    net: &StTrans,
    observed: ArrayView3<'_, f32>,
    passes: usize,
    seed: u64,
) -> Result<SpreadEstimate> {
    if passes < 2 {
        return Err(Error::invalid("MC-dropout", "need at least 2 passes"));
    }
    let mut rng = stream_rng(seed, 0x3C);
    let mut preds = Vec::with_capacity(passes);
    for _ in 0..passes {
        preds.extend(net.predict(&[observed.view()], &mut Mode::Train(&mut rng))?);
    }
    Ok(SpreadEstimate {
        value: mean_cell_std(&preds)?,
        forward_passes: preds.len(),
        degenerate: net.config().dropout_rate == 0.0,
    })
}

/// Spread across independently trained members, one forward pass each.
pub fn ensemble_uncertainty(
    members: &[Checkpoint],
    observed: ArrayView3<'_, f32>,
) -> Result<SpreadEstimate> {
    if members.len() < 2 {
        return Err(Error::invalid("ensemble", "need at least 2 members"));
    }
    let first = &members[0];
    if members
        .iter()
        .any(|m| m.kind != first.kind || m.shape != first.shape)
    {
        return Err(Error::invalid(
            "ensemble",
            "members have different architectures",
        ));
    }
    let mut preds = Vec::with_capacity(members.len());
    for m in members {
        preds.push(m.forecaster()?.forecast(observed.view())?.y_hat);
    }
    Ok(SpreadEstimate {
        value: mean_cell_std(&preds)?,
        forward_passes: preds.len(),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_offset_gives_half_the_offset() {
        let a = Array3::from_shape_fn((3, 2, 3), |(t, j, x)| (t + j + x) as f32);
        let mut b = a.clone();
        b.map_axis_mut(ndarray::Axis(2), |mut v| v[2] += 5.0);
        assert_eq!(mean_cell_std(&[a.clone(), b]).unwrap(), 2.5);
        assert_eq!(mean_cell_std(&[a.clone(), a]).unwrap(), 0.0);
    }
}
