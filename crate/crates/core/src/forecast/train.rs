//! Joint optimization of forecaster weights and prior parameters.

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3, ArrayView3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{zero_vel_forecast, Checkpoint, ForecasterKind, ModelShape, StTrans};
use crate::error::{Error, Result};
use crate::loss::{plain_l2_loss_with_grad, pual_loss_with_grad};
use crate::metrics::a_mpjpe;
use crate::nn::{stream_rng, Adam, Mode};
use crate::pose::ForecastSample;
use crate::priors::{PriorFamily, PriorParams, PriorScope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub family: PriorFamily,
    #[serde(default = "default_scope")]
    pub scope: PriorScope,
}

fn default_scope() -> PriorScope {
    PriorScope::JointTime
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub prior: Option<PriorSpec>,
    /// Fraction of source ids routed to validation by hash.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: Some(1.0),
            seed: 0,
            prior: None,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("train config", "batch_size must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "train config",
                "learning_rate must be finite and >= 0",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::invalid(
                "train config",
                "betas must be in [0, 1) and eps > 0",
            ));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::invalid("train config", "grad_clip must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(
                "train config",
                "val_fraction must be in [0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub train_loss: f64,
    pub val_a_mpjpe: f64,
}

/// What the instrumentation hook sees after each optimizer step's forward
/// pass, before parameters change.
pub struct StepInfo<'a> {
    pub epoch: usize,
    pub step: usize,
    pub targets: &'a [Array3<f64>],
    pub predictions: &'a [Array3<f64>],
    /// Prior whose grid produced the `u` consumed by this step.
    pub prior: Option<&'a PriorParams>,
    pub u: Option<&'a Array2<f64>>,
    /// Batch-mean loss that was differentiated.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// True when no source id hashed into the validation split and the
    /// training samples were scored instead.
    pub validated_on_training: bool,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Routes a sample to validation when its source id hashes below the fraction.
pub fn is_validation(source_id: &str, fraction: f64) -> bool {
    (fnv1a(source_id) % 10_000) as f64 / 10_000.0 < fraction
}

fn dataset_shape(data: &[ForecastSample]) -> Result<ModelShape> {
    let first = data
        .first()
        .ok_or_else(|| Error::invalid("training data", "dataset is empty"))?;
    let shape = ModelShape {
        obs_len: first.obs_len(),
        horizon: first.horizon(),
        joints: first.num_joints(),
    };
    for s in data {
        if s.obs_len() != shape.obs_len
            || s.horizon() != shape.horizon
            || s.num_joints() != shape.joints
        {
            return Err(Error::shape(
                "training sample",
                &[shape.obs_len, shape.horizon, shape.joints],
                &[s.obs_len(), s.horizon(), s.num_joints()],
            ));
        }
    }
    shape.validate()?;
    Ok(shape)
}

enum Net {
    ZeroVel,
    StTrans(StTrans),
}

impl Net {
    fn predict(&self, obs: &[ArrayView3<'_, f32>], horizon: usize) -> Result<Vec<Array3<f32>>> {
        match self {
            Net::ZeroVel => obs
                .iter()
                .map(|o| zero_vel_forecast(o.view(), horizon))
                .collect(),
            Net::StTrans(net) => {
                let mut out = Vec::with_capacity(obs.len());
                for chunk in obs.chunks(64) {
                    out.extend(net.predict(chunk, &mut Mode::Eval)?);
                }
                Ok(out)
            }
        }
    }
}

fn mean_a_mpjpe(net: &Net, samples: &[&ForecastSample], horizon: usize) -> Result<f64> {
    let views: Vec<_> = samples.iter().map(|s| s.observed.view()).collect();
    let preds = net.predict(&views, horizon)?;
    let mut total = 0.0;
    for (s, p) in samples.iter().zip(&preds) {
        total += a_mpjpe(s.future.view(), p.view())?;
    }
    Ok(total / samples.len() as f64)
}

/// Trains without instrumentation.
pub fn train(
    kind: &ForecasterKind,
    data: &[ForecastSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_hook(kind, data, cfg, &mut |_| {})
}

/// Trains `kind` on `data`, calling `hook` once per optimizer step.
pub fn train_with_hook(
    kind: &ForecasterKind,
    data: &[ForecastSample],
    cfg: &TrainConfig,
    hook: &mut dyn FnMut(&StepInfo<'_>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let shape = dataset_shape(data)?;
    let (mut train_set, mut val_set): (Vec<&ForecastSample>, Vec<&ForecastSample>) = data
        .iter()
        .partition(|s| !is_validation(&s.source_id, cfg.val_fraction));
    if train_set.is_empty() {
        std::mem::swap(&mut train_set, &mut val_set);
    }
    let validated_on_training = val_set.is_empty();
    if validated_on_training {
        val_set = train_set.clone();
    }

    let net = match kind {
        ForecasterKind::ZeroVel => Net::ZeroVel,
        ForecasterKind::StTrans(c) => {
            Net::StTrans(StTrans::new(c.clone(), shape, DType::F32, cfg.seed)?)
        }
    };
    let mut prior = cfg
        .prior
        .map(|p| PriorParams::init(p.family, p.scope, shape.horizon, shape.joints))
        .transpose()?;

    let mut opt = Adam::new(cfg.learning_rate, cfg.grad_clip);
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.eps = cfg.eps;
    let mut dropout_rng = stream_rng(cfg.seed, 0xD0);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, 0x1000 + epoch as u64));
        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&ForecastSample> = batch_idx.iter().map(|&i| train_set[i]).collect();
            let b = batch.len();
            let views: Vec<_> = batch.iter().map(|s| s.observed.view()).collect();
            let targets: Vec<Array3<f64>> =
                batch.iter().map(|s| s.future.mapv(f64::from)).collect();

            let (out_tensor, predictions) = match &net {
                Net::ZeroVel => {
                    let p = net.predict(&views, shape.horizon)?;
                    (
                        None,
                        p.into_iter().map(|a| a.mapv(f64::from)).collect::<Vec<_>>(),
                    )
                }
                Net::StTrans(st) => {
                    let out = st.forward(&views, &mut Mode::Train(&mut dropout_rng))?;
                    let flat = out.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
                    let per = shape.horizon * shape.joints * 3;
                    let preds = flat
                        .chunks_exact(per)
                        .map(|c| {
                            Array3::from_shape_vec((shape.horizon, shape.joints, 3), c.to_vec())
                                .expect("chunk")
                        })
                        .collect();
                    (Some(out), preds)
                }
            };

            let u = prior.as_ref().map(PriorParams::grid).transpose()?;
            let mut loss = 0.0;
            let mut d_y_hat = Vec::with_capacity(b * shape.horizon * shape.joints * 3);
            let mut d_u = Array2::<f64>::zeros((shape.horizon, shape.joints));
            for (y, y_hat) in targets.iter().zip(&predictions) {
                match &u {
                    Some(u) => {
                        let (br, g) = pual_loss_with_grad(y.view(), y_hat.view(), u.view())?;
                        loss += br.total;
                        d_y_hat.extend(g.d_y_hat.iter().map(|v| v / b as f64));
                        d_u.scaled_add(1.0 / b as f64, &g.d_u);
                    }
                    None => {
                        let (l, g) = plain_l2_loss_with_grad(y.view(), y_hat.view())?;
                        loss += l;
                        d_y_hat.extend(g.iter().map(|v| v / b as f64));
                    }
                }
            }
            let batch_loss = loss / b as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite loss at step {step}"),
                });
            }
            step += 1;
            hook(&StepInfo {
                epoch,
                step,
                targets: &targets,
                predictions: &predictions,
                prior: prior.as_ref(),
                u: u.as_ref(),
                loss: batch_loss,
            });
            loss_sum += loss;

            let mut params: Vec<Vec<f64>> = Vec::new();
            let mut grads: Vec<Vec<f64>> = Vec::new();
            if let (Net::StTrans(st), Some(out)) = (&net, &out_tensor) {
                let upstream =
                    Tensor::from_vec(d_y_hat, out.shape(), &Device::Cpu)?.to_dtype(out.dtype())?;
                let store = (out * upstream)?.sum_all()?.backward()?;
                params = st.params().values()?;
                grads = st.params().grads(&store)?;
            }
            let n_weight_groups = params.len();
            if let Some(p) = &prior {
                params.push(p.theta().iter().copied().collect());
                grads.push(p.backprop(d_u.view())?.iter().copied().collect());
            }
            if params.is_empty() {
                continue;
            }
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite gradient at step {step}"),
                });
            }
            opt.update(&mut params, &grads);
            if let Some(p) = prior.as_mut() {
                let flat = params.pop().expect("prior group");
                let (rows, cols) = p.theta().dim();
                p.set_theta(Array2::from_shape_vec((rows, cols), flat).expect("theta shape"))?;
            }
            if let Net::StTrans(st) = &net {
                debug_assert_eq!(params.len(), n_weight_groups);
                st.params().set_values(&params)?;
            }
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_a_mpjpe = mean_a_mpjpe(&net, &val_set, shape.horizon)?;
        if !val_a_mpjpe.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite validation error".into(),
            });
        }
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_a_mpjpe,
        });
    }

    let weights = match &net {
        Net::ZeroVel => Vec::new(),
        Net::StTrans(st) => st.params().export("")?,
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            kind: kind.clone(),
            shape,
            train: cfg.clone(),
            prior,
            weights,
            epoch_log: log,
        },
        validated_on_training,
    })
}
