//! Experiment configuration: one JSON document, overridable by global flags.

use std::path::{Path, PathBuf};

use posecast::epistemic::{AutoencoderConfig, ClusterConfig, EstimateKConfig, Tsne};
use posecast::forecast::{ForecasterKind, StTransConfig, TrainConfig};
use posecast::metrics::horizon_frame;
use posecast::pose::SYNTH_FPS;
use serde::{Deserialize, Serialize};

use crate::ConfigError;

/// Synthetic corpus layout and windowing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding poseseq files and `manifest.json`; defaults to
    /// `<out>/data`.
    pub dir: Option<PathBuf>,
    pub families: Vec<u32>,
    pub train_sequences_per_family: usize,
    pub test_sequences_per_family: usize,
    pub num_frames: usize,
    /// Seed of the generated corpus.
    pub seed: u64,
    pub obs_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub test_stride: usize,
    /// Families the forecaster is trained and evaluated on; all when absent.
    pub train_families: Option<Vec<u32>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            families: vec![0, 1, 2],
            train_sequences_per_family: 20,
            test_sequences_per_family: 5,
            num_frames: 300,
            seed: 0,
            obs_len: 10,
            horizon: 25,
            stride: 5,
            test_stride: 10,
            train_families: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpistemicConfig {
    /// Families the cluster model is fitted on.
    pub in_families: Vec<u32>,
    /// Families treated as unseen by `epu auroc`.
    pub held_out_families: Vec<u32>,
    pub autoencoder: AutoencoderConfig,
    pub cluster: ClusterConfig,
    pub estimate_k: EstimateKConfig,
    pub tsne: Tsne,
    /// Fixed cluster count; the density-peaks estimate is used when absent.
    pub k: Option<usize>,
    /// Forecaster whose outputs are scored; defaults to the first seed of the
    /// main run.
    pub checkpoint: Option<PathBuf>,
}

impl Default for EpistemicConfig {
    fn default() -> Self {
        Self {
            in_families: vec![0],
            held_out_families: vec![1],
            autoencoder: AutoencoderConfig::default(),
            cluster: ClusterConfig::default(),
            estimate_k: EstimateKConfig::default(),
            tsne: Tsne::default(),
            k: None,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment directory.
    pub out: PathBuf,
    pub data: DataConfig,
    pub forecaster: ForecasterKind,
    /// `train.prior` is the main run's prior; `train.seed` is replaced per seed.
    pub train: TrainConfig,
    /// Also train a prior-free run for gain tables when `train.prior` is set.
    pub baseline: bool,
    pub horizons_ms: Vec<f64>,
    pub epistemic: EpistemicConfig,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("experiment"),
            data: DataConfig::default(),
            forecaster: ForecasterKind::StTrans(StTransConfig::default()),
            train: TrainConfig::default(),
            baseline: true,
            horizons_ms: vec![80.0, 160.0, 320.0, 400.0, 560.0, 720.0, 880.0, 1000.0],
            epistemic: EpistemicConfig::default(),
            seeds: vec![0],
        }
    }
}

/// Global flag values; each mirrors a config key and wins over it.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| ConfigError(format!("config {}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = overrides.seed {
            match cfg.seeds.first_mut() {
                Some(first) => *first = seed,
                None => cfg.seeds.push(seed),
            }
        }
        if overrides.k.is_some() {
            cfg.epistemic.k = overrides.k;
        }
        if overrides.checkpoint.is_some() {
            cfg.epistemic.checkpoint = overrides.checkpoint.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError(msg));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        let d = &self.data;
        if d.families.is_empty() {
            return bad("data.families must be non-empty".into());
        }
        if d.obs_len == 0 || d.horizon == 0 || d.stride == 0 || d.test_stride == 0 {
            return bad("data.obs_len, horizon, stride and test_stride must be >= 1".into());
        }
        if d.num_frames < d.obs_len + d.horizon {
            return bad(format!(
                "data.num_frames = {} is shorter than one window ({})",
                d.num_frames,
                d.obs_len + d.horizon
            ));
        }
        for fam in self
            .train_families()
            .iter()
            .chain(&self.epistemic.in_families)
            .chain(&self.epistemic.held_out_families)
        {
            if !d.families.contains(fam) {
                return bad(format!(
                    "family {fam} is not generated (data.families = {:?})",
                    d.families
                ));
            }
        }
        for &h in &self.horizons_ms {
            let frame = horizon_frame(h, SYNTH_FPS)
                .map_err(|e| ConfigError(format!("horizons_ms: {e}")))?;
            if frame == 0 || frame > d.horizon {
                return bad(format!(
                    "horizon {h} ms is outside the {}-frame forecast",
                    d.horizon
                ));
            }
        }
        if let ForecasterKind::StTrans(st) = &self.forecaster {
            st.validate()
                .map_err(|e| ConfigError(format!("forecaster: {e}")))?;
        }
        self.train
            .validate()
            .map_err(|e| ConfigError(format!("train: {e}")))?;
        self.epistemic
            .autoencoder
            .validate()
            .map_err(|e| ConfigError(format!("epistemic.autoencoder: {e}")))?;
        if self.epistemic.k == Some(0) {
            return bad("epistemic.k must be >= 1".into());
        }
        Ok(())
    }

    pub fn train_families(&self) -> Vec<u32> {
        self.data
            .train_families
            .clone()
            .unwrap_or_else(|| self.data.families.clone())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data
            .dir
            .clone()
            .unwrap_or_else(|| self.out.join("data"))
    }

    /// Name of the main run: the prior family, or `baseline` without one.
    pub fn main_run(&self) -> String {
        self.train
            .prior
            .map_or_else(|| BASELINE_RUN.to_string(), |p| p.family.name())
    }

    /// Runs trained by `train`: the main run, preceded by the baseline when
    /// gains can be computed.
    pub fn runs(&self) -> Vec<String> {
        if self.baseline && self.train.prior.is_some() {
            vec![BASELINE_RUN.to_string(), self.main_run()]
        } else {
            vec![self.main_run()]
        }
    }

    pub fn checkpoint_path(&self, run: &str, seed: u64) -> PathBuf {
        self.out
            .join("checkpoints")
            .join(format!("{run}_seed{seed}.ckpt"))
    }

    pub fn log_path(&self, run: &str, seed: u64) -> PathBuf {
        self.out.join("logs").join(format!("{run}_seed{seed}.csv"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    pub fn cluster_dir(&self) -> PathBuf {
        self.out.join("cluster")
    }

    pub fn epu_checkpoint(&self) -> PathBuf {
        self.epistemic
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.checkpoint_path(&self.main_run(), self.seeds[0]))
    }
}

pub const BASELINE_RUN: &str = "baseline";
