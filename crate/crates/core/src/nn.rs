//! Minimal layer kit over `candle-core` tensors.
//!
//! Parameters are created from an explicit seeded generator and dropout masks
//! are drawn from a caller-owned generator, so every forward and training pass
//! is reproducible from its seeds.

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archive::Blob;
use crate::error::{ArchiveError, Error, Result};

/// Named trainable tensors of one model.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
    dtype: DType,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            entries: Vec::new(),
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn push(&mut self, name: String, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::invalid(
                "parameter",
                format!("duplicate name `{name}`"),
            ));
        }
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.entries.push((name, var.clone()));
        Ok(var)
    }

    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.push(name.into(), shape, values)
    }

    pub fn constant(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        value: f64,
    ) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.push(name.into(), shape, vec![value; n])
    }

    pub fn entries(&self) -> &[(String, Var)] {
        &self.entries
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Flattened parameter values, in registration order.
    pub fn values(&self) -> Result<Vec<Vec<f64>>> {
        self.entries
            .iter()
            .map(|(_, v)| {
                Ok(v.as_tensor()
                    .flatten_all()?
                    .to_dtype(DType::F64)?
                    .to_vec1::<f64>()?)
            })
            .collect()
    }

    pub fn set_values(&self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::shape(
                "parameter set",
                &[self.entries.len()],
                &[values.len()],
            ));
        }
        for ((_, var), vals) in self.entries.iter().zip(values) {
            let t = Tensor::from_slice(vals, var.shape(), &Device::Cpu)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// Gradients for every parameter from a backward pass; parameters the
    /// loss does not reach get zeros.
    pub fn grads(&self, store: &candle_core::backprop::GradStore) -> Result<Vec<Vec<f64>>> {
        self.entries
            .iter()
            .map(|(_, v)| match store.get(v.as_tensor()) {
                Some(g) => Ok(g.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?),
                None => Ok(vec![0.0; v.elem_count()]),
            })
            .collect()
    }

    /// Parameters as little-endian `f32` blobs.
    pub fn export(&self, prefix: &str) -> Result<Vec<Blob>> {
        self.entries
            .iter()
            .map(|(name, v)| {
                Ok(Blob {
                    name: format!("{prefix}{name}"),
                    shape: v.dims().to_vec(),
                    data: v
                        .as_tensor()
                        .flatten_all()?
                        .to_dtype(DType::F32)?
                        .to_vec1::<f32>()?,
                })
            })
            .collect()
    }

    pub fn import(&self, prefix: &str, blobs: &[Blob]) -> Result<()> {
        for (name, var) in &self.entries {
            let full = format!("{prefix}{name}");
            let blob = blobs
                .iter()
                .find(|b| b.name == full)
                .ok_or_else(|| ArchiveError::MissingBlob(full.clone()))?;
            if blob.shape != var.dims() {
                return Err(Error::shape("checkpoint blob", var.dims(), &blob.shape));
            }
            let t =
                Tensor::from_slice(&blob.data, var.shape(), &Device::Cpu)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }
}

/// Dense layer on the last axis: `x @ w + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    w: Var,
    b: Var,
    out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            w: store.uniform(format!("{name}.weight"), &[in_dim, out_dim], bound, rng)?,
            b: store.uniform(format!("{name}.bias"), &[out_dim], bound, rng)?,
            out_dim,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().expect("at least 1-d input");
        let rows = x.elem_count() / in_dim;
        let y = x
            .reshape((rows, in_dim))?
            .matmul(self.w.as_tensor())?
            .broadcast_add(self.b.as_tensor())?;
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-empty") = self.out_dim;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Var,
    beta: Var,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(format!("{name}.gamma"), &[dim], 1.0)?,
            beta: store.constant(format!("{name}.beta"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }
}

/// Numerically stable softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Logistic function in its tanh form, which stays finite in both tails.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? * 0.5)?.affine(1.0, 0.5)?)
}

/// Forward-pass mode. Training mode carries the generator that draws dropout
/// masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Inverted dropout. Identity in eval mode or at rate zero.
pub fn dropout(x: &Tensor, rate: f64, mode: &mut Mode<'_>) -> Result<Tensor> {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let mask: Vec<f64> = (0..x.elem_count())
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect();
            let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
            Ok(x.mul(&mask)?)
        }
        _ => Ok(x.clone()),
    }
}

/// Multi-head self-attention over the middle axis of `(N, L, W)`.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    qkv: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::invalid(
                "attention",
                format!("width {width} not divisible by {heads} heads"),
            ));
        }
        Ok(Self {
            qkv: Linear::new(store, &format!("{name}.qkv"), width, 3 * width, rng)?,
            out: Linear::new(store, &format!("{name}.out"), width, width, rng)?,
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, l, w) = x.dims3()?;
        let hd = w / self.heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((n, l, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?
            .contiguous()?;
        let q = qkv.get(0)?.reshape((n * self.heads, l, hd))?;
        let k = qkv.get(1)?.reshape((n * self.heads, l, hd))?;
        let v = qkv.get(2)?.reshape((n * self.heads, l, hd))?;
        let scores = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? * (1.0 / (hd as f64).sqrt()))?;
        let attn = softmax_last(&scores)?;
        let ctx = attn
            .matmul(&v)?
            .reshape((n, self.heads, l, hd))?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((n, l, w))?;
        self.out.forward(&ctx)
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    norm1: LayerNorm,
    attn: SelfAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    dropout: f64,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        hidden: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width)?,
            attn: SelfAttention::new(store, &format!("{name}.attn"), width, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width)?,
            fc1: Linear::new(store, &format!("{name}.fc1"), width, hidden, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, width, rng)?,
            dropout,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode<'_>) -> Result<Tensor> {
        let a = self.attn.forward(&self.norm1.forward(x)?)?;
        let x = (x + dropout(&a, self.dropout, mode)?)?;
        let h = self.fc1.forward(&self.norm2.forward(&x)?)?.silu()?;
        let h = self.fc2.forward(&dropout(&h, self.dropout, mode)?)?;
        Ok((x + h)?)
    }
}

/// Single-layer LSTM cell with fused gates `[input, forget, cell, output]`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    w_ih: Linear,
    w_hh: Linear,
    hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            w_ih: Linear::new(store, &format!("{name}.ih"), input, 4 * hidden, rng)?,
            w_hh: Linear::new(store, &format!("{name}.hh"), hidden, 4 * hidden, rng)?,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One step from `(h, c)`, each `(N, hidden)`.
    pub fn step(&self, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let gates = (self.w_ih.forward(x)? + self.w_hh.forward(h)?)?;
        let chunks = gates.chunk(4, D::Minus1)?;
        let i = sigmoid(&chunks[0])?;
        let f = sigmoid(&chunks[1])?;
        let g = chunks[2].tanh()?;
        let o = sigmoid(&chunks[3])?;
        let c = ((f * c)? + (i * g)?)?;
        let h = (o * c.tanh()?)?;
        Ok((h, c))
    }
}

/// Adam with optional global gradient-norm clipping, over flat `f64` views
/// of any number of parameter groups.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64, clip_norm: Option<f64>) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place; returns the pre-clip global gradient norm.
    pub fn update(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> f64 {
        assert_eq!(
            params.len(),
            grads.len(),
            "parameter and gradient groups differ"
        );
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..p.len() {
                let gk = g[k] * scale;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        norm
    }
}

/// Seeded generator derived from a base seed and a stream tag.
pub fn stream_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(
            vec![1.0f64, 2.0, 3.0, -1.0, 0.0, 1000.0],
            (2, 3),
            &Device::Cpu,
        )
        .unwrap();
        let s = softmax_last(&x).unwrap().to_vec2::<f64>().unwrap();
        for row in s {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_moves_against_gradient_and_clips() {
        let mut opt = Adam::new(0.1, Some(1.0));
        let mut p = vec![vec![1.0, -1.0]];
        let norm = opt.update(&mut p, &[vec![30.0, -40.0]]);
        assert_eq!(norm, 50.0);
        assert!(p[0][0] < 1.0 && p[0][1] > -1.0);
        let mut zero = Adam::new(0.0, None);
        let mut q = vec![vec![2.0]];
        zero.update(&mut q, &[vec![5.0]]);
        assert_eq!(q[0][0], 2.0);
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let x = Tensor::ones((4, 4), DType::F32, &Device::Cpu).unwrap();
        let y = dropout(&x, 0.5, &mut Mode::Eval).unwrap();
        assert_eq!(y.to_vec2::<f32>().unwrap(), x.to_vec2::<f32>().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = dropout(&x, 0.5, &mut Mode::Train(&mut rng))
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        assert!(z.iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(z.iter().any(|&v| v == 0.0));
    }

    #[test]
    fn store_round_trips_through_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = ParamStore::new(DType::F32);
        Linear::new(&mut a, "l", 3, 2, &mut rng).unwrap();
        let mut b = ParamStore::new(DType::F32);
        Linear::new(&mut b, "l", 3, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        b.import("", &a.export("").unwrap()).unwrap();
        assert_eq!(a.values().unwrap(), b.values().unwrap());
        assert!(a.constant("l.weight", &[1], 0.0).is_err());
    }
}
