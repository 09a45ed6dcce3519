//! Epistemic uncertainty of arbitrary forecasters.
//!
//! A sequence autoencoder is pretrained on motion windows, the number of
//! motion clusters is estimated from density peaks of its 2-D reduced latent
//! codes, and deep embedded clustering refines encoder and centers. A
//! forecast's uncertainty is the entropy of its soft cluster assignment.

mod autoencoder;
mod baselines;
mod dec;
mod density;
mod epu;
mod kmeans;
mod tsne;

pub use autoencoder::{
    pretrain_autoencoder, AutoencoderConfig, AutoencoderMeta, AutoencoderState, PretrainReport,
};
pub use baselines::{ensemble_uncertainty, mc_dropout_uncertainty, mean_cell_std, SpreadEstimate};
pub use dec::{
    fit_clusters, hard_labels, soft_assignments, target_distribution, ClusterConfig, ClusterModel,
    FitReport, CLUSTER_MODEL_KIND,
};
pub use density::{
    default_k_max, density_stats, estimate_k, scoring_k, select_k, Cutoff, DensityStats,
    EstimateKConfig,
};
pub use epu::{entropy, epu_score, EpUReport};
pub use kmeans::{kmeans, purity, KMeansResult, KMEANS_ATTEMPTS};
pub use tsne::{FirstTwo, Reducer2d, Tsne};
