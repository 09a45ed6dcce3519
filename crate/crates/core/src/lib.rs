//! Uncertainty-aware human pose forecasting.
//!
//! - [`pose`]: skeletons, sequences, windowing, the `poseseq` file format and
//!   a synthetic motion-family generator.
//! - [`priors`] and [`loss`]: prior families for the aleatoric uncertainty
//!   grid and the uncertainty-weighted loss that consumes it.
//! - [`forecast`]: Zero-Vel and a spatio-temporal transformer, their training
//!   loop and checkpoints.
//! - [`metrics`]: MPJPE family, AUROC and horizon tables.
//! - [`epistemic`]: clustering-based epistemic uncertainty (EpU) plus
//!   MC-dropout and ensemble baselines.

pub mod archive;
pub mod epistemic;
pub mod error;
pub mod forecast;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod pose;
pub mod priors;

pub use error::{Error, Result};
