//! Forecaster checkpoints in the shared archive format.

use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{EpochRecord, Forecaster, ForecasterKind, ModelShape, StTrans, TrainConfig, ZeroVel};
use crate::archive::{Archive, Blob};
use crate::error::{ArchiveError, Error, Result};
use crate::priors::{PriorParams, PriorRecord};

/// Value of the manifest `kind` field for forecaster archives.
pub const CHECKPOINT_KIND: &str = "forecaster";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Configs {
    forecaster: ForecasterKind,
    shape: ModelShape,
    train: TrainConfig,
}

/// Trained forecaster: weights, learned prior (if any), configs and the
/// per-epoch log.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ForecasterKind,
    pub shape: ModelShape,
    pub train: TrainConfig,
    pub prior: Option<PriorParams>,
    pub weights: Vec<Blob>,
    pub epoch_log: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn to_archive(&self) -> Archive {
        let mut meta = Map::new();
        meta.insert("kind".into(), CHECKPOINT_KIND.into());
        meta.insert("forecaster_kind".into(), self.kind.name().into());
        let configs = Configs {
            forecaster: self.kind.clone(),
            shape: self.shape,
            train: self.train.clone(),
        };
        meta.insert(
            "configs".into(),
            serde_json::to_value(configs).expect("configs serialize"),
        );
        if let Some(p) = &self.prior {
            meta.insert(
                "prior".into(),
                serde_json::to_value(PriorRecord::from(p)).expect("prior serializes"),
            );
        }
        meta.insert(
            "epoch_log".into(),
            serde_json::to_value(&self.epoch_log).expect("log serializes"),
        );
        Archive {
            meta,
            blobs: self.weights.clone(),
        }
    }

    pub fn from_archive(archive: Archive) -> Result<Self> {
        let kind: String = archive.meta_field("kind")?;
        if kind != CHECKPOINT_KIND {
            return Err(ArchiveError::WrongKind {
                expected: CHECKPOINT_KIND.into(),
                found: kind,
            }
            .into());
        }
        let configs: Configs = archive.meta_field("configs")?;
        let prior = match archive.meta.get("prior") {
            None | Some(Value::Null) => None,
            Some(_) => Some(PriorParams::try_from(
                &archive.meta_field::<PriorRecord>("prior")?,
            )?),
        };
        let epoch_log = archive.meta_field("epoch_log")?;
        let ckpt = Self {
            kind: configs.forecaster,
            shape: configs.shape,
            train: configs.train,
            prior,
            weights: archive.blobs,
            epoch_log,
        };
        if let Some(p) = &ckpt.prior {
            if p.horizon() != ckpt.shape.horizon || p.joints() != ckpt.shape.joints {
                return Err(
                    ArchiveError::Corrupted("prior does not match the model shape".into()).into(),
                );
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(Archive::read(path)?)
    }

    pub fn final_val_a_mpjpe(&self) -> Option<f64> {
        self.epoch_log.last().map(|r| r.val_a_mpjpe)
    }

    /// The transformer network with its trained weights and prior.
    pub fn st_trans(&self) -> Result<StTrans> {
        let ForecasterKind::StTrans(cfg) = &self.kind else {
            return Err(Error::invalid("checkpoint", "not an st_trans checkpoint"));
        };
        let mut net = StTrans::from_blobs(cfg.clone(), self.shape, DType::F32, &self.weights)?;
        net.set_prior(self.prior.clone());
        Ok(net)
    }

    pub fn forecaster(&self) -> Result<Box<dyn Forecaster>> {
        Ok(match &self.kind {
            ForecasterKind::ZeroVel => {
                Box::new(ZeroVel::new(self.shape.horizon)?.with_prior(self.prior.clone()))
            }
            ForecasterKind::StTrans(_) => Box::new(self.st_trans()?),
        })
    }
}
