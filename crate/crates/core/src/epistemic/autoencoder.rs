//! LSTM sequence autoencoder over motion windows.
//!
//! Inputs are standardized per (joint, axis) feature with statistics taken
//! from the pretraining corpus. The encoder's final hidden state is projected
//! to the latent code; the decoder receives that code at every step.

use std::sync::atomic::{AtomicUsize, Ordering};

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, ArrayView3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::archive::Blob;
use crate::error::{Error, Result};
use crate::nn::{stream_rng, Adam, Linear, LstmCell, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: Option<f64>,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            hidden: 64,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            grad_clip: Some(1.0),
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "autoencoder config",
                "latent_dim, hidden and batch_size must be >= 1",
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "autoencoder config",
                "learning_rate must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

/// Serializable description of an autoencoder apart from its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderMeta {
    pub config: AutoencoderConfig,
    pub seq_len: usize,
    pub joints: usize,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

#[derive(Debug)]
pub struct AutoencoderState {
    meta: AutoencoderMeta,
    enc_store: ParamStore,
    dec_store: ParamStore,
    encoder: LstmCell,
    to_latent: Linear,
    decoder: LstmCell,
    to_output: Linear,
    encoded: AtomicUsize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Full-corpus reconstruction MSE before any update.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

const EVAL_CHUNK: usize = 256;

impl AutoencoderState {
    fn build(meta: AutoencoderMeta, seed: u64) -> Result<Self> {
        meta.config.validate()?;
        let features = meta.joints * 3;
        let (h, l) = (meta.config.hidden, meta.config.latent_dim);
        let mut rng = stream_rng(seed, 0xAE);
        let mut enc_store = ParamStore::new(DType::F32);
        let encoder = LstmCell::new(&mut enc_store, "encoder.lstm", features, h, &mut rng)?;
        let to_latent = Linear::new(&mut enc_store, "encoder.latent", h, l, &mut rng)?;
        let mut dec_store = ParamStore::new(DType::F32);
        let decoder = LstmCell::new(&mut dec_store, "decoder.lstm", l, h, &mut rng)?;
        let to_output = Linear::new(&mut dec_store, "decoder.output", h, features, &mut rng)?;
        Ok(Self {
            meta,
            enc_store,
            dec_store,
            encoder,
            to_latent,
            decoder,
            to_output,
            encoded: AtomicUsize::new(0),
        })
    }

    /// Untrained autoencoder whose input statistics come from `seqs`.
    pub fn new(seqs: &[ArrayView3<'_, f32>], cfg: AutoencoderConfig, seed: u64) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::invalid("autoencoder corpus", "no sequences"))?;
        let (seq_len, joints, axes) = first.dim();
        if seq_len == 0 || joints == 0 || axes != 3 {
            return Err(Error::shape(
                "autoencoder input",
                &[seq_len.max(1), joints.max(1), 3],
                first.shape(),
            ));
        }
        let features = joints * 3;
        let mut sum = vec![0.0f64; features];
        let mut sq = vec![0.0f64; features];
        for s in seqs {
            if s.dim() != (seq_len, joints, 3) {
                return Err(Error::shape(
                    "autoencoder input",
                    &[seq_len, joints, 3],
                    s.shape(),
                ));
            }
            for frame in s.outer_iter() {
                for (k, v) in frame.iter().enumerate() {
                    sum[k] += *v as f64;
                    sq[k] += (*v as f64) * (*v as f64);
                }
            }
        }
        let n = (seqs.len() * seq_len) as f64;
        let feature_mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        // One pooled scale for every channel: per-channel scaling would blow
        // sensor noise on still joints up to the size of real motion.
        let pooled_var = sq
            .iter()
            .zip(&feature_mean)
            .map(|(q, m)| (q / n - m * m).max(0.0))
            .sum::<f64>()
            / features as f64;
        let feature_std = vec![pooled_var.sqrt().max(1e-6); features];
        Self::build(
            AutoencoderMeta {
                config: cfg,
                seq_len,
                joints,
                feature_mean,
                feature_std,
            },
            seed,
        )
    }

    pub fn from_parts(meta: AutoencoderMeta, blobs: &[Blob]) -> Result<Self> {
        if meta.feature_mean.len() != meta.joints * 3 || meta.feature_std.len() != meta.joints * 3 {
            return Err(Error::invalid(
                "autoencoder meta",
                "feature statistics do not match joint count",
            ));
        }
        let ae = Self::build(meta, 0)?;
        ae.enc_store.import("", blobs)?;
        ae.dec_store.import("", blobs)?;
        Ok(ae)
    }

    /// Deep copy with independent weights and a fresh call counter.
    pub fn duplicate(&self) -> Result<Self> {
        Self::from_parts(self.meta.clone(), &self.blobs()?)
    }

    pub fn meta(&self) -> &AutoencoderMeta {
        &self.meta
    }

    pub fn latent_dim(&self) -> usize {
        self.meta.config.latent_dim
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.meta.seq_len, self.meta.joints, 3)
    }

    pub fn encoder_params(&self) -> &ParamStore {
        &self.enc_store
    }

    pub fn decoder_params(&self) -> &ParamStore {
        &self.dec_store
    }

    pub fn blobs(&self) -> Result<Vec<Blob>> {
        let mut b = self.enc_store.export("")?;
        b.extend(self.dec_store.export("")?);
        Ok(b)
    }

    /// Number of samples passed through the encoder since construction.
    pub fn encoded_samples(&self) -> usize {
        self.encoded.load(Ordering::Relaxed)
    }

    /// Standardized `(N, L, J*3)` input tensor.
    pub fn standardize(&self, seqs: &[ArrayView3<'_, f32>]) -> Result<Tensor> {
        let (l, j, _) = self.input_shape();
        let f = j * 3;
        let mut data = Vec::with_capacity(seqs.len() * l * f);
        for s in seqs {
            if s.dim() != (l, j, 3) {
                return Err(Error::shape("autoencoder input", &[l, j, 3], s.shape()));
            }
            for frame in s.outer_iter() {
                for (k, v) in frame.iter().enumerate() {
                    data.push(
                        ((*v as f64 - self.meta.feature_mean[k]) / self.meta.feature_std[k]) as f32,
                    );
                }
            }
        }
        Ok(Tensor::from_vec(data, (seqs.len(), l, f), &Device::Cpu)?)
    }

    /// Latent codes `(N, latent_dim)` of a standardized batch.
    pub fn encode_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let (n, l, _) = x.dims3()?;
        self.encoded.fetch_add(n, Ordering::Relaxed);
        let hdim = self.encoder.hidden();
        let mut h = Tensor::zeros((n, hdim), DType::F32, &Device::Cpu)?;
        let mut c = h.clone();
        for t in 0..l {
            let xt = x.narrow(1, t, 1)?.squeeze(1)?;
            (h, c) = self.encoder.step(&xt, &h, &c)?;
        }
        self.to_latent.forward(&h)
    }

    /// Reconstruction `(N, L, J*3)` in standardized units.
    pub fn decode_tensor(&self, z: &Tensor) -> Result<Tensor> {
        let n = z.dims2()?.0;
        let hdim = self.decoder.hidden();
        let mut h = Tensor::zeros((n, hdim), DType::F32, &Device::Cpu)?;
        let mut c = h.clone();
        let mut outs = Vec::with_capacity(self.meta.seq_len);
        for _ in 0..self.meta.seq_len {
            (h, c) = self.decoder.step(z, &h, &c)?;
            outs.push(self.to_output.forward(&h)?);
        }
        Ok(Tensor::stack(&outs, 1)?)
    }

    /// Latent codes of raw windows.
    pub fn encode(&self, seqs: &[ArrayView3<'_, f32>]) -> Result<Array2<f64>> {
        let k = self.latent_dim();
        let mut flat = Vec::with_capacity(seqs.len() * k);
        for chunk in seqs.chunks(EVAL_CHUNK) {
            let z = self.encode_tensor(&self.standardize(chunk)?)?;
            flat.extend(z.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?);
        }
        Ok(Array2::from_shape_vec((seqs.len(), k), flat).expect("latent shape"))
    }

    /// Mean squared reconstruction error in standardized units.
    pub fn reconstruction_mse(&self, seqs: &[ArrayView3<'_, f32>]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in seqs.chunks(EVAL_CHUNK) {
            let x = self.standardize(chunk)?;
            let r = self.decode_tensor(&self.encode_tensor(&x)?)?;
            total += (r - &x)?
                .sqr()?
                .sum_all()?
                .to_dtype(DType::F64)?
                .to_scalar::<f64>()?;
            count += x.elem_count();
        }
        Ok(total / count as f64)
    }
}

pub(crate) fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Pretrains an autoencoder on `seqs` by minimizing reconstruction MSE.
pub fn pretrain_autoencoder(
    seqs: &[ArrayView3<'_, f32>],
    cfg: &AutoencoderConfig,
    seed: u64,
) -> Result<(AutoencoderState, PretrainReport)> {
    if seqs.len() < 2 {
        return Err(Error::invalid(
            "autoencoder corpus",
            "need at least 2 sequences",
        ));
    }
    let ae = AutoencoderState::new(seqs, cfg.clone(), seed)?;
    let initial_loss = ae.reconstruction_mse(seqs)?;
    let mut opt = Adam::new(cfg.learning_rate, cfg.grad_clip);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut stream_rng(seed, 0x2000 + epoch as u64));
        let mut sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = idx.iter().map(|&i| seqs[i].view()).collect();
            let x = ae.standardize(&batch)?;
            let loss = mse(&ae.decode_tensor(&ae.encode_tensor(&x)?)?, &x)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "non-finite reconstruction loss".into(),
                });
            }
            sum += value * idx.len() as f64;
            let grads = loss.backward()?;
            let mut params = ae.enc_store.values()?;
            let n_enc = params.len();
            params.extend(ae.dec_store.values()?);
            let mut g = ae.enc_store.grads(&grads)?;
            g.extend(ae.dec_store.grads(&grads)?);
            opt.update(&mut params, &g);
            ae.dec_store.set_values(&params[n_enc..])?;
            ae.enc_store.set_values(&params[..n_enc])?;
        }
        epoch_losses.push(sum / seqs.len() as f64);
    }
    let final_loss = ae.reconstruction_mse(seqs)?;
    Ok((
        ae,
        PretrainReport {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}
