//! Deep embedded clustering on top of a pretrained sequence autoencoder.

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use ndarray::{Array2, ArrayView2, ArrayView3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use super::autoencoder::{mse, AutoencoderMeta, AutoencoderState};
use super::kmeans::kmeans;
use crate::archive::{Archive, Blob};
use crate::error::{ArchiveError, Error, Result};
use crate::nn::{stream_rng, Adam};

/// Value of the manifest `kind` field for cluster-model archives.
pub const CLUSTER_MODEL_KIND: &str = "cluster_model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Weight of the reconstruction term next to the clustering KL term.
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Optimizer steps between target-distribution refreshes.
    pub update_interval: usize,
    /// Stop once fewer than this fraction of hard labels change between
    /// refreshes.
    pub tol: f64,
    pub finetune_epochs: usize,
    pub freeze_decoder: bool,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            learning_rate: 1e-3,
            batch_size: 64,
            max_steps: 1000,
            update_interval: 50,
            tol: 0.001,
            finetune_epochs: 3,
            freeze_decoder: false,
            kmeans_iters: 300,
            seed: 0,
        }
    }
}

/// Encoder, cluster centers and the regularization weight they were fitted
/// with.
#[derive(Debug)]
pub struct ClusterModel {
    autoencoder: AutoencoderState,
    centers: Array2<f64>,
    lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub init_labels: Vec<usize>,
    pub final_labels: Vec<usize>,
    pub kmeans_attempt: usize,
    pub refinement_steps: usize,
}

/// Student's-t soft assignment rows `(N, K)` of latent codes.
pub fn soft_assignments(z: ArrayView2<'_, f64>, centers: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, k) = (z.nrows(), centers.nrows());
    let mut q = Array2::zeros((n, k));
    for i in 0..n {
        let mut total = 0.0;
        for c in 0..k {
            let d2: f64 = z
                .row(i)
                .iter()
                .zip(centers.row(c).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = 1.0 / (1.0 + d2);
            q[[i, c]] = v;
            total += v;
        }
        q.row_mut(i).mapv_inplace(|v| v / total);
    }
    q
}

/// Sharpened target: `q^2` divided by cluster frequency, renormalized per row.
pub fn target_distribution(q: ArrayView2<'_, f64>) -> Array2<f64> {
    let freq = q.sum_axis(ndarray::Axis(0));
    let mut p = Array2::from_shape_fn(q.dim(), |(i, c)| q[[i, c]] * q[[i, c]] / freq[c]);
    for mut row in p.outer_iter_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

pub fn hard_labels(q: ArrayView2<'_, f64>) -> Vec<usize> {
    q.outer_iter()
        .map(|row| {
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn soft_assign_tensor(z: &Tensor, mu: &Tensor) -> Result<Tensor> {
    let d2 = z
        .unsqueeze(1)?
        .broadcast_sub(&mu.unsqueeze(0)?)?
        .sqr()?
        .sum(D::Minus1)?;
    let num = (d2 + 1.0)?.recip()?;
    Ok(num.broadcast_div(&num.sum_keepdim(D::Minus1)?)?)
}

fn select_rows(a: &Array2<f64>, idx: &[usize]) -> Result<Tensor> {
    let k = a.ncols();
    let flat: Vec<f32> = idx
        .iter()
        .flat_map(|&i| a.row(i).iter().map(|&v| v as f32).collect::<Vec<_>>())
        .collect();
    Ok(Tensor::from_vec(flat, (idx.len(), k), &Device::Cpu)?)
}

fn var_values(v: &Var) -> Result<Vec<f64>> {
    Ok(v.as_tensor()
        .flatten_all()?
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?)
}

/// Batches drawn from a per-pass seeded permutation.
struct BatchStream {
    n: usize,
    size: usize,
    seed: u64,
    pass: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        Self {
            n,
            size,
            seed,
            pass: 0,
            order: Vec::new(),
            pos: n,
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.pass += 1;
            self.order = (0..self.n).collect();
            self.order
                .shuffle(&mut stream_rng(self.seed, 0x3000 + self.pass));
            self.pos = 0;
        }
        let end = (self.pos + self.size).min(self.n);
        let b = self.order[self.pos..end].to_vec();
        self.pos = end;
        b
    }
}

/// Fits `k` clusters: k-means initialization on the latent codes, KL
/// refinement against a periodically refreshed target with `lambda`-weighted
/// reconstruction, then cross-entropy fine-tuning of the encoder on the
/// refined hard labels with centers held fixed.
pub fn fit_clusters(
    ae: &AutoencoderState,
    seqs: &[ArrayView3<'_, f32>],
    k: usize,
    cfg: &ClusterConfig,
) -> Result<(ClusterModel, FitReport)> {
    let n = seqs.len();
    if k == 0 || n < k {
        return Err(Error::invalid(
            "fit_clusters",
            format!("k = {k} with {n} sequences"),
        ));
    }
    if cfg.batch_size == 0 || cfg.update_interval == 0 || !(cfg.lambda >= 0.0) {
        return Err(Error::invalid(
            "cluster config",
            "batch_size and update_interval must be >= 1, lambda >= 0",
        ));
    }
    let ae = ae.duplicate()?;

    // initialization
    let z0 = ae.encode(seqs)?;
    let init = kmeans(z0.view(), k, cfg.seed, cfg.kmeans_iters)?;
    let mu = Var::from_tensor(&Tensor::from_vec(
        init.centers.iter().map(|&v| v as f32).collect::<Vec<_>>(),
        init.centers.dim(),
        &Device::Cpu,
    )?)?;

    // refinement
    let train_decoder = cfg.lambda > 0.0 && !cfg.freeze_decoder;
    let mut opt = Adam::new(cfg.learning_rate, None);
    let mut stream = BatchStream::new(n, cfg.batch_size, cfg.seed);
    let mut labels = init.labels.clone();
    let mut target = Array2::zeros((n, k));
    let mut step = 0;
    while step < cfg.max_steps {
        if step % cfg.update_interval == 0 {
            let centers = Array2::from_shape_vec((k, ae.latent_dim()), var_values(&mu)?)
                .expect("center shape");
            let q = soft_assignments(ae.encode(seqs)?.view(), centers.view());
            let new_labels = hard_labels(q.view());
            let changed = new_labels
                .iter()
                .zip(&labels)
                .filter(|(a, b)| a != b)
                .count();
            labels = new_labels;
            target = target_distribution(q.view());
            if step > 0 && (changed as f64) < cfg.tol * n as f64 {
                break;
            }
        }
        let idx = stream.next_batch();
        let batch: Vec<_> = idx.iter().map(|&i| seqs[i].view()).collect();
        let x = ae.standardize(&batch)?;
        let z = ae.encode_tensor(&x)?;
        let q = soft_assign_tensor(&z, mu.as_tensor())?;
        let p = select_rows(&target, &idx)?;
        let kl = ((p.clone()
            * (p.clamp(1e-12f32, 1.0f32)?.log()? - q.clamp(1e-12f32, 1.0f32)?.log()?)?)?
        .sum_all()?
            / idx.len() as f64)?;
        let loss = if cfg.lambda > 0.0 {
            (kl + (mse(&ae.decode_tensor(&z)?, &x)? * cfg.lambda)?)?
        } else {
            kl
        };
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch: step,
                reason: "non-finite clustering loss".into(),
            });
        }
        let grads = loss.backward()?;
        let mut params = ae.encoder_params().values()?;
        let mut g = ae.encoder_params().grads(&grads)?;
        let n_enc = params.len();
        params.push(var_values(&mu)?);
        g.push(match grads.get(mu.as_tensor()) {
            Some(t) => t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?,
            None => vec![0.0; k * ae.latent_dim()],
        });
        if train_decoder {
            params.extend(ae.decoder_params().values()?);
            g.extend(ae.decoder_params().grads(&grads)?);
        }
        opt.update(&mut params, &g);
        ae.encoder_params().set_values(&params[..n_enc])?;
        mu.set(
            &Tensor::from_slice(&params[n_enc], (k, ae.latent_dim()), &Device::Cpu)?
                .to_dtype(DType::F32)?,
        )?;
        if train_decoder {
            ae.decoder_params().set_values(&params[n_enc + 1..])?;
        }
        step += 1;
    }
    let refinement_steps = step;

    // fine-tuning on the refined labels; the soft assignment to the fixed
    // centers is the classifier, so the encoder pulls codes onto their center
    if cfg.finetune_epochs > 0 && k > 1 {
        let centers = mu.as_tensor().detach();
        let mut opt = Adam::new(cfg.learning_rate, None);
        let mut stream = BatchStream::new(n, cfg.batch_size, cfg.seed ^ 0xF1);
        let steps = cfg.finetune_epochs * n.div_ceil(cfg.batch_size);
        for _ in 0..steps {
            let idx = stream.next_batch();
            let batch: Vec<_> = idx.iter().map(|&i| seqs[i].view()).collect();
            let z = ae.encode_tensor(&ae.standardize(&batch)?)?;
            let q = soft_assign_tensor(&z, &centers)?;
            let mut onehot = vec![0f32; idx.len() * k];
            for (r, &i) in idx.iter().enumerate() {
                onehot[r * k + labels[i]] = 1.0;
            }
            let onehot = Tensor::from_vec(onehot, (idx.len(), k), &Device::Cpu)?;
            let ce = ((q.clamp(1e-12f32, 1.0f32)?.log()? * onehot)?.sum_all()?
                * (-1.0 / idx.len() as f64))?;
            let grads = ce.backward()?;
            let mut params = ae.encoder_params().values()?;
            let g = ae.encoder_params().grads(&grads)?;
            opt.update(&mut params, &g);
            ae.encoder_params().set_values(&params)?;
        }
    }

    let centers =
        Array2::from_shape_vec((k, ae.latent_dim()), var_values(&mu)?).expect("center shape");
    let model = ClusterModel {
        autoencoder: ae,
        centers,
        lambda: cfg.lambda,
    };
    let final_labels = hard_labels(model.soft_assign(seqs)?.view());
    Ok((
        model,
        FitReport {
            init_labels: init.labels,
            final_labels,
            kmeans_attempt: init.attempt,
            refinement_steps,
        },
    ))
}

impl ClusterModel {
    pub fn from_parts(
        autoencoder: AutoencoderState,
        centers: Array2<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if centers.nrows() == 0 || centers.ncols() != autoencoder.latent_dim() {
            return Err(Error::shape(
                "cluster centers",
                &[centers.nrows().max(1), autoencoder.latent_dim()],
                centers.shape(),
            ));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cluster centers"));
        }
        Ok(Self {
            autoencoder,
            centers,
            lambda,
        })
    }

    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn centers(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn autoencoder(&self) -> &AutoencoderState {
        &self.autoencoder
    }

    /// Soft assignment rows `(N, K)`, one encoder pass per sequence.
    pub fn soft_assign(&self, seqs: &[ArrayView3<'_, f32>]) -> Result<Array2<f64>> {
        let z = self.autoencoder.encode(seqs)?;
        Ok(soft_assignments(z.view(), self.centers.view()))
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let mut meta = Map::new();
        meta.insert("kind".into(), CLUSTER_MODEL_KIND.into());
        meta.insert(
            "autoencoder".into(),
            serde_json::to_value(self.autoencoder.meta())?,
        );
        meta.insert("k".into(), self.k().into());
        meta.insert("lambda".into(), serde_json::to_value(self.lambda)?);
        let mut blobs = self.autoencoder.blobs()?;
        blobs.push(Blob {
            name: "centers".into(),
            shape: vec![self.k(), self.centers.ncols()],
            data: self.centers.iter().map(|&v| v as f32).collect(),
        });
        Ok(Archive { meta, blobs })
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let kind: String = archive.meta_field("kind")?;
        if kind != CLUSTER_MODEL_KIND {
            return Err(ArchiveError::WrongKind {
                expected: CLUSTER_MODEL_KIND.into(),
                found: kind,
            }
            .into());
        }
        let meta: AutoencoderMeta = archive.meta_field("autoencoder")?;
        let k: usize = archive.meta_field("k")?;
        let lambda: f64 = archive.meta_field("lambda")?;
        let ae = AutoencoderState::from_parts(meta, &archive.blobs)?;
        let c = archive.blob("centers")?;
        if c.shape != [k, ae.latent_dim()] {
            return Err(ArchiveError::Corrupted("centers blob has the wrong shape".into()).into());
        }
        let centers = Array2::from_shape_vec(
            (k, ae.latent_dim()),
            c.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("checked shape");
        Self::from_parts(ae, centers, lambda)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive()?.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epistemic::autoencoder::{pretrain_autoencoder, AutoencoderConfig};
    use ndarray::{arr2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grouped_windows(per_group: usize, seed: u64) -> Vec<Array3<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3 * per_group)
            .map(|i| {
                let g = (i % 3) as f32;
                Array3::from_shape_fn((5, 2, 3), |(t, j, a)| {
                    g * 50.0 * ((t + j + a) % 2) as f32 + g * 20.0 + rng.random_range(-3.0..3.0)
                })
            })
            .collect()
    }

    fn small_ae(views: &[ArrayView3<'_, f32>]) -> AutoencoderState {
        let cfg = AutoencoderConfig {
            latent_dim: 3,
            hidden: 8,
            epochs: 5,
            batch_size: 8,
            ..AutoencoderConfig::default()
        };
        pretrain_autoencoder(views, &cfg, 4).unwrap().0
    }

    fn quick(lambda: f64, freeze: bool) -> ClusterConfig {
        ClusterConfig {
            lambda,
            freeze_decoder: freeze,
            max_steps: 30,
            update_interval: 10,
            batch_size: 8,
            finetune_epochs: 1,
            ..ClusterConfig::default()
        }
    }

    #[test]
    fn soft_rows_are_distributions() {
        let z = arr2(&[[0.0, 0.0], [3.0, 1.0], [10.0, -2.0]]);
        let mu = arr2(&[[0.0, 0.0], [5.0, 5.0], [-1.0, 2.0]]);
        let q = soft_assignments(z.view(), mu.view());
        for row in q.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let p = target_distribution(q.view());
        for row in p.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let single = soft_assignments(z.view(), arr2(&[[1.0, 1.0]]).view());
        assert!(single.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_lambda_ignores_decoder() {
        let data = grouped_windows(8, 1);
        let views: Vec<_> = data.iter().map(|a| a.view()).collect();
        let ae = small_ae(&views);
        let (frozen, rf) = fit_clusters(&ae, &views, 3, &quick(0.0, true)).unwrap();
        let (free, rl) = fit_clusters(&ae, &views, 3, &quick(0.0, false)).unwrap();
        assert_eq!(frozen.centers(), free.centers());
        assert_eq!(rf, rl);
        assert_eq!(
            frozen.autoencoder().blobs().unwrap(),
            free.autoencoder().blobs().unwrap()
        );
        assert_eq!(
            frozen.autoencoder().decoder_params().values().unwrap(),
            ae.decoder_params().values().unwrap()
        );
    }

    #[test]
    fn archive_round_trip_preserves_assignments() {
        let data = grouped_windows(5, 2);
        let views: Vec<_> = data.iter().map(|a| a.view()).collect();
        let ae = small_ae(&views);
        let (model, _) = fit_clusters(&ae, &views, 2, &quick(0.5, false)).unwrap();
        let back = ClusterModel::from_archive(
            &Archive::decode(&model.to_archive().unwrap().encode()).unwrap(),
        )
        .unwrap();
        assert_eq!(
            model.soft_assign(&views).unwrap(),
            back.soft_assign(&views).unwrap()
        );
        assert_eq!(back.k(), 2);
    }

    #[test]
    fn rejects_more_clusters_than_samples() {
        let data = grouped_windows(1, 3);
        let views: Vec<_> = data.iter().map(|a| a.view()).collect();
        let ae = small_ae(&views);
        assert!(fit_clusters(&ae, &views, 4, &quick(0.0, false)).is_err());
    }
}
