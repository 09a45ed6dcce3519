//! Spatio-temporal transformer forecaster.
//!
//! Tokens are (frame, joint) pairs of the observation window. Each block runs
//! a temporal encoder (attention across frames, per joint) followed by a
//! spatial encoder (attention across joints, per frame); block outputs are
//! summed through skip connections before the output MLP decodes every
//! joint's token column into its `T` future positions.

use candle_core::{DType, Device, Tensor, Var};
use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use super::{ForecastOutput, Forecaster, ModelShape};
use crate::archive::Blob;
use crate::error::{Error, Result};
use crate::nn::{stream_rng, EncoderLayer, Linear, Mode, ParamStore};
use crate::priors::PriorParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StTransConfig {
    pub num_blocks: usize,
    pub model_width: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    pub dropout_rate: f64,
    /// Millimeters per network unit for motion relative to the last frame.
    pub motion_scale: f64,
    /// Millimeters per network unit for pose relative to its centroid.
    pub pose_scale: f64,
}

impl Default for StTransConfig {
    fn default() -> Self {
        Self {
            num_blocks: 6,
            model_width: 64,
            num_heads: 4,
            mlp_hidden: 128,
            dropout_rate: 0.1,
            motion_scale: 100.0,
            pose_scale: 1000.0,
        }
    }
}

impl StTransConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 || self.model_width == 0 || self.mlp_hidden == 0 {
            return Err(Error::invalid(
                "st-trans config",
                "blocks, width and hidden size must be >= 1",
            ));
        }
        if self.num_heads == 0 || self.model_width % self.num_heads != 0 {
            return Err(Error::invalid(
                "st-trans config",
                format!(
                    "model_width {} not divisible by num_heads {}",
                    self.model_width, self.num_heads
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(
                "st-trans config",
                "dropout_rate must be in [0, 1)",
            ));
        }
        if !(self.motion_scale > 0.0 && self.pose_scale > 0.0) {
            return Err(Error::invalid("st-trans config", "scales must be positive"));
        }
        Ok(())
    }
}

const FEATURES: usize = 6;

#[derive(Debug, Clone)]
struct Block {
    temporal: EncoderLayer,
    spatial: EncoderLayer,
}

#[derive(Debug, Clone)]
pub struct StTrans {
    cfg: StTransConfig,
    shape: ModelShape,
    store: ParamStore,
    embed_in: Linear,
    embed_hidden: Linear,
    frame_embedding: Var,
    joint_embedding: Var,
    blocks: Vec<Block>,
    decode_hidden: Linear,
    decode_out: Linear,
    prior: Option<PriorParams>,
}

impl StTrans {
    /// Freshly initialized network; weights depend only on `(cfg, shape, seed)`.
    pub fn new(cfg: StTransConfig, shape: ModelShape, dtype: DType, seed: u64) -> Result<Self> {
        cfg.validate()?;
        shape.validate()?;
        let mut rng = stream_rng(seed, 0x57);
        let mut store = ParamStore::new(dtype);
        let w = cfg.model_width;
        let embed_in = Linear::new(&mut store, "embed.in", FEATURES, w, &mut rng)?;
        let embed_hidden = Linear::new(&mut store, "embed.hidden", w, w, &mut rng)?;
        let frame_embedding =
            store.uniform("embed.frame", &[shape.obs_len, 1, w], 0.1, &mut rng)?;
        let joint_embedding = store.uniform("embed.joint", &[1, shape.joints, w], 0.1, &mut rng)?;
        let blocks = (0..cfg.num_blocks)
            .map(|b| {
                Ok(Block {
                    temporal: EncoderLayer::new(
                        &mut store,
                        &format!("block{b}.temporal"),
                        w,
                        cfg.num_heads,
                        cfg.mlp_hidden,
                        cfg.dropout_rate,
                        &mut rng,
                    )?,
                    spatial: EncoderLayer::new(
                        &mut store,
                        &format!("block{b}.spatial"),
                        w,
                        cfg.num_heads,
                        cfg.mlp_hidden,
                        cfg.dropout_rate,
                        &mut rng,
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let decode_hidden = Linear::new(
            &mut store,
            "decode.hidden",
            shape.obs_len * w,
            cfg.mlp_hidden,
            &mut rng,
        )?;
        let decode_out = Linear::new(
            &mut store,
            "decode.out",
            cfg.mlp_hidden,
            shape.horizon * 3,
            &mut rng,
        )?;
        Ok(Self {
            cfg,
            shape,
            store,
            embed_in,
            embed_hidden,
            frame_embedding,
            joint_embedding,
            blocks,
            decode_hidden,
            decode_out,
            prior: None,
        })
    }

    /// Rebuilds a network from exported blobs.
    pub fn from_blobs(
        cfg: StTransConfig,
        shape: ModelShape,
        dtype: DType,
        blobs: &[Blob],
    ) -> Result<Self> {
        let net = Self::new(cfg, shape, dtype, 0)?;
        net.store.import("", blobs)?;
        Ok(net)
    }

    pub fn config(&self) -> &StTransConfig {
        &self.cfg
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn prior(&self) -> Option<&PriorParams> {
        self.prior.as_ref()
    }

    pub fn set_prior(&mut self, prior: Option<PriorParams>) {
        self.prior = prior;
    }

    /// A deep copy whose learned joint embedding rows are reordered so that
    /// new joint `k` uses the embedding of old joint `perm[k]`.
    pub fn with_joint_permutation(&self, perm: &[usize]) -> Result<Self> {
        let j = self.shape.joints;
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..j).collect::<Vec<_>>() {
            return Err(Error::invalid(
                "joint permutation",
                format!("{perm:?} is not a permutation of 0..{j}"),
            ));
        }
        let mut blobs = self.store.export("")?;
        let w = self.cfg.model_width;
        for blob in blobs.iter_mut().filter(|b| b.name == "embed.joint") {
            let old = blob.data.clone();
            for (k, &src) in perm.iter().enumerate() {
                blob.data[k * w..(k + 1) * w].copy_from_slice(&old[src * w..(src + 1) * w]);
            }
        }
        let mut net = Self::from_blobs(self.cfg.clone(), self.shape, self.store.dtype(), &blobs)?;
        net.prior = self.prior.clone();
        Ok(net)
    }

    fn check_window(&self, obs: &ArrayView3<'_, f32>) -> Result<()> {
        let expected = [self.shape.obs_len, self.shape.joints, 3];
        if obs.shape() != expected {
            return Err(Error::shape("st-trans input", &expected, obs.shape()));
        }
        Ok(())
    }

    /// Input features `(B, O, J, 6)` and last observed frame `(B, 1, J, 3)`.
    fn prepare(&self, batch: &[ArrayView3<'_, f32>]) -> Result<(Tensor, Tensor)> {
        let (o, j) = (self.shape.obs_len, self.shape.joints);
        let mut feats = Vec::with_capacity(batch.len() * o * j * FEATURES);
        let mut last = Vec::with_capacity(batch.len() * j * 3);
        for obs in batch {
            self.check_window(obs)?;
            for jj in 0..j {
                for a in 0..3 {
                    last.push(obs[[o - 1, jj, a]] as f64);
                }
            }
            for f in 0..o {
                let mut centroid = [0.0f64; 3];
                for jj in 0..j {
                    for a in 0..3 {
                        centroid[a] += obs[[f, jj, a]] as f64 / j as f64;
                    }
                }
                for jj in 0..j {
                    for a in 0..3 {
                        feats.push(
                            (obs[[f, jj, a]] as f64 - obs[[o - 1, jj, a]] as f64)
                                / self.cfg.motion_scale,
                        );
                    }
                    for a in 0..3 {
                        feats.push((obs[[f, jj, a]] as f64 - centroid[a]) / self.cfg.pose_scale);
                    }
                }
            }
        }
        let b = batch.len();
        let dtype = self.store.dtype();
        let feats = Tensor::from_vec(feats, (b, o, j, FEATURES), &Device::Cpu)?.to_dtype(dtype)?;
        let last = Tensor::from_vec(last, (b, 1, j, 3), &Device::Cpu)?.to_dtype(dtype)?;
        Ok((feats, last))
    }

    /// Batched forward pass, returning predicted poses `(B, T, J, 3)` in mm.
    pub fn forward(&self, batch: &[ArrayView3<'_, f32>], mode: &mut Mode<'_>) -> Result<Tensor> {
        if batch.is_empty() {
            return Err(Error::invalid("st-trans input", "empty batch"));
        }
        let (feats, last) = self.prepare(batch)?;
        let (b, o, j, w) = (
            batch.len(),
            self.shape.obs_len,
            self.shape.joints,
            self.cfg.model_width,
        );
        let mut h = self
            .embed_hidden
            .forward(&self.embed_in.forward(&feats)?.silu()?)?;
        h = h
            .broadcast_add(self.frame_embedding.as_tensor())?
            .broadcast_add(self.joint_embedding.as_tensor())?;
        let mut skip: Option<Tensor> = None;
        for block in &self.blocks {
            // temporal: sequences over frames, one per (sample, joint)
            let t_in = h
                .permute((0, 2, 1, 3))?
                .contiguous()?
                .reshape((b * j, o, w))?;
            let t_out = block.temporal.forward(&t_in, mode)?;
            let s_in = t_out
                .reshape((b, j, o, w))?
                .permute((0, 2, 1, 3))?
                .contiguous()?
                .reshape((b * o, j, w))?;
            let s_out = block.spatial.forward(&s_in, mode)?;
            h = s_out.reshape((b, o, j, w))?;
            skip = Some(match skip {
                None => h.clone(),
                Some(s) => (s + &h)?,
            });
        }
        let z = (skip.expect("at least one block") * (1.0 / (self.blocks.len() as f64).sqrt()))?;
        let cols = z
            .permute((0, 2, 1, 3))?
            .contiguous()?
            .reshape((b, j, o * w))?;
        let delta = self
            .decode_out
            .forward(&self.decode_hidden.forward(&cols)?.silu()?)?
            .reshape((b, j, self.shape.horizon, 3))?
            .permute((0, 2, 1, 3))?;
        Ok((delta * self.cfg.motion_scale)?.broadcast_add(&last)?)
    }

    /// Forward pass converted to per-sample `(T, J, 3)` arrays.
    pub fn predict(
        &self,
        batch: &[ArrayView3<'_, f32>],
        mode: &mut Mode<'_>,
    ) -> Result<Vec<Array3<f32>>> {
        let out = self.forward(batch, mode)?;
        tensor_to_windows(&out, self.shape.horizon, self.shape.joints)
    }
}

/// Splits a `(B, T, J, 3)` tensor into `B` owned `f32` arrays.
pub(crate) fn tensor_to_windows(
    t: &Tensor,
    horizon: usize,
    joints: usize,
) -> Result<Vec<Array3<f32>>> {
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let per = horizon * joints * 3;
    Ok(flat
        .chunks_exact(per)
        .map(|c| Array3::from_shape_vec((horizon, joints, 3), c.to_vec()).expect("chunk size"))
        .collect())
}

impl Forecaster for StTrans {
    fn horizon(&self) -> usize {
        self.shape.horizon
    }

    fn forecast(&self, observed: ArrayView3<'_, f32>) -> Result<ForecastOutput> {
        Ok(self.forecast_batch(&[observed])?.remove(0))
    }

    fn forecast_batch(&self, observed: &[ArrayView3<'_, f32>]) -> Result<Vec<ForecastOutput>> {
        let u = self.prior.as_ref().map(PriorParams::grid).transpose()?;
        let mut out = Vec::with_capacity(observed.len());
        for chunk in observed.chunks(64) {
            for y_hat in self.predict(chunk, &mut Mode::Eval)? {
                out.push(ForecastOutput {
                    y_hat,
                    u: u.clone(),
                });
            }
        }
        Ok(out)
    }
}

/// Largest relative deviation between backpropagated weight gradients of
/// the pUAL loss and central finite differences, on a double-precision
/// one-block network with random inputs. Three coordinates of every
/// parameter tensor are probed.
pub fn network_gradient_check(seed: u64) -> Result<f64> {
    use crate::loss::{pual_loss, pual_loss_with_grad, relative_deviation};
    use ndarray::{Array2, Array4, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let (batch, o, t, j) = (2, 3, 2, 3);
    let cfg = StTransConfig {
        num_blocks: 1,
        model_width: 8,
        num_heads: 2,
        mlp_hidden: 16,
        dropout_rate: 0.0,
        ..StTransConfig::default()
    };
    let shape = ModelShape {
        obs_len: o,
        horizon: t,
        joints: j,
    };
    let net = StTrans::new(cfg, shape, DType::F64, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let obs: Vec<Array3<f32>> = (0..batch)
        .map(|_| {
            Array3::from_shape_fn((o, j, 3), |(f, jj, a)| {
                (jj as f32 * 100.0 + a as f32 * 40.0)
                    + f as f32 * 5.0
                    + rng.random_range(-20.0..20.0)
            })
        })
        .collect();
    let targets: Vec<Array3<f64>> = (0..batch)
        .map(|_| Array3::from_shape_fn((t, j, 3), |_| rng.random_range(-200.0..200.0)))
        .collect();
    let u = Array2::from_shape_fn((t, j), |_| rng.random_range(0.0..2.0));
    let views: Vec<_> = obs.iter().map(|x| x.view()).collect();

    let predict = |net: &StTrans| -> Result<(Tensor, Array4<f64>)> {
        let out = net.forward(&views, &mut Mode::Eval)?;
        let flat = out.flatten_all()?.to_vec1::<f64>()?;
        let pred = Array4::from_shape_vec((batch, t, j, 3), flat).expect("forward output shape");
        Ok((out, pred))
    };
    let loss_of = |net: &StTrans| -> Result<f64> {
        let (_, pred) = predict(net)?;
        let mut total = 0.0;
        for (i, y) in targets.iter().enumerate() {
            total += pual_loss(y.view(), pred.index_axis(Axis(0), i), u.view())?.total;
        }
        Ok(total)
    };

    let (out, pred) = predict(&net)?;
    let mut upstream = Vec::new();
    for (i, y) in targets.iter().enumerate() {
        let (_, g) = pual_loss_with_grad(y.view(), pred.index_axis(Axis(0), i), u.view())?;
        upstream.extend(g.d_y_hat.iter().copied());
    }
    let upstream = Tensor::from_vec(upstream, out.shape(), &Device::Cpu)?;
    let grads = (out * upstream)?.sum_all()?.backward()?;
    let analytic = net.params().grads(&grads)?;

    let mut values = net.params().values()?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut pick = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    for (p, group) in analytic.iter().enumerate() {
        for _ in 0..3 {
            let k = pick.random_range(0..group.len());
            let orig = values[p][k];
            values[p][k] = orig + h;
            net.params().set_values(&values)?;
            let plus = loss_of(&net)?;
            values[p][k] = orig - h;
            net.params().set_values(&values)?;
            let minus = loss_of(&net)?;
            values[p][k] = orig;
            net.params().set_values(&values)?;
            worst = worst.max(relative_deviation(group[k], (plus - minus) / (2.0 * h)));
        }
    }
    Ok(worst)
}
