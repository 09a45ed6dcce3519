//! Forecasters behind one interface, their training loop, and checkpoints.

mod checkpoint;
mod st_trans;
mod train;

use ndarray::{Array2, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::PriorParams;

pub use checkpoint::{Checkpoint, CHECKPOINT_KIND};
pub use st_trans::{network_gradient_check, StTrans, StTransConfig};
pub use train::{
    is_validation, train, train_with_hook, EpochRecord, PriorSpec, StepInfo, TrainConfig,
    TrainOutcome,
};

/// Predicted future poses and, for prior-trained models, the learned
/// aleatoric uncertainty grid `(T, J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOutput {
    pub y_hat: Array3<f32>,
    pub u: Option<Array2<f64>>,
}

pub trait Forecaster: Send + Sync {
    fn horizon(&self) -> usize;

    fn forecast(&self, observed: ArrayView3<'_, f32>) -> Result<ForecastOutput>;

    fn forecast_batch(&self, observed: &[ArrayView3<'_, f32>]) -> Result<Vec<ForecastOutput>> {
        observed.iter().map(|o| self.forecast(o.view())).collect()
    }
}

/// Window geometry a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub obs_len: usize,
    pub horizon: usize,
    pub joints: usize,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.obs_len == 0 || self.horizon == 0 || self.joints == 0 {
            return Err(Error::invalid(
                "model shape",
                "obs_len, horizon and joints must be >= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecasterKind {
    ZeroVel,
    StTrans(StTransConfig),
}

impl ForecasterKind {
    pub fn name(&self) -> &'static str {
        match self {
            ForecasterKind::ZeroVel => "zero_vel",
            ForecasterKind::StTrans(_) => "st_trans",
        }
    }
}

/// Repeats the last observed pose over the whole horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroVel {
    horizon: usize,
    prior: Option<PriorParams>,
}

impl ZeroVel {
    pub fn new(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("zero-vel horizon", "must be >= 1"));
        }
        Ok(Self {
            horizon,
            prior: None,
        })
    }

    /// Zero-Vel has no weights, but a prior can still be fitted to its errors.
    pub fn with_prior(mut self, prior: Option<PriorParams>) -> Self {
        self.prior = prior;
        self
    }

    pub fn prior(&self) -> Option<&PriorParams> {
        self.prior.as_ref()
    }
}

pub fn zero_vel_forecast(observed: ArrayView3<'_, f32>, horizon: usize) -> Result<Array3<f32>> {
    let (o, j, c) = observed.dim();
    if o == 0 || c != 3 {
        return Err(Error::shape(
            "zero-vel input",
            &[o.max(1), j, 3],
            observed.shape(),
        ));
    }
    let last = observed.index_axis(Axis(0), o - 1);
    Ok(last
        .insert_axis(Axis(0))
        .broadcast((horizon, j, 3))
        .expect("broadcast last frame")
        .to_owned())
}

impl Forecaster for ZeroVel {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forecast(&self, observed: ArrayView3<'_, f32>) -> Result<ForecastOutput> {
        Ok(ForecastOutput {
            y_hat: zero_vel_forecast(observed, self.horizon)?,
            u: self.prior.as_ref().map(PriorParams::grid).transpose()?,
        })
    }
}
