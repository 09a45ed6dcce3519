//! Deterministic synthetic motion families.
//!
//! Each joint follows `rest + amplitude * sin(2*pi*frequency*t + phase) +
//! drift * t` plus white Gaussian noise, on the canonical 8-joint figure.
//! [`FamilyTemplate`] adds per-sequence jitter so that windows drawn from one
//! family are not near-duplicates of each other.

use std::f64::consts::{PI, TAU};

use ndarray::{arr2, Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{PoseSequence, Skeleton};
use crate::error::{Error, Result};

/// Frame rate of generated sequences.
pub const SYNTH_FPS: f64 = 25.0;

/// Rest pose of [`Skeleton::canonical`], millimeters, y up, z forward.
pub fn canonical_rest_pose() -> Array2<f64> {
    arr2(&[
        [0.0, 1000.0, 0.0],
        [0.0, 1300.0, 0.0],
        [0.0, 1500.0, 0.0],
        [0.0, 1650.0, 20.0],
        [-420.0, 1050.0, 80.0],
        [420.0, 1050.0, 80.0],
        [-150.0, 80.0, 0.0],
        [150.0, 80.0, 0.0],
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFamilySpec {
    pub family_id: u32,
    /// Per-joint, per-axis amplitude in mm, shape `(J, 3)`.
    pub amplitude: Array2<f64>,
    /// Per-joint frequency in Hz.
    pub frequency: Array1<f64>,
    /// Per-joint phase in radians.
    pub phase: Array1<f64>,
    /// Root drift in mm/s, applied to every joint.
    pub drift: [f64; 3],
    pub noise_std: f64,
}

impl MotionFamilySpec {
    /// A motionless family: every joint stays at rest.
    pub fn still(family_id: u32, joints: usize) -> Self {
        Self {
            family_id,
            amplitude: Array2::zeros((joints, 3)),
            frequency: Array1::from_elem(joints, 1.0),
            phase: Array1::zeros(joints),
            drift: [0.0; 3],
            noise_std: 0.0,
        }
    }

    pub fn num_joints(&self) -> usize {
        self.frequency.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.frequency.len();
        if self.amplitude.dim() != (j, 3) || self.phase.len() != j {
            return Err(Error::shape(
                "motion family",
                &[j, 3],
                &[self.amplitude.nrows(), self.amplitude.ncols()],
            ));
        }
        if self.amplitude.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::invalid(
                "motion family",
                "amplitudes must be finite and >= 0",
            ));
        }
        if self.frequency.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::invalid(
                "motion family",
                "frequencies must be finite and > 0",
            ));
        }
        if self
            .phase
            .iter()
            .chain(self.drift.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid(
                "motion family",
                "phases and drift must be finite",
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid(
                "motion family",
                "noise_std must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

/// Generates `num_frames` frames of `spec` on the canonical skeleton at
/// [`SYNTH_FPS`]. Output depends only on `(spec, num_frames, seed)`.
pub fn generate_family(
    spec: &MotionFamilySpec,
    num_frames: usize,
    seed: u64,
) -> Result<PoseSequence> {
    spec.validate()?;
    let skeleton = Skeleton::canonical();
    let rest = canonical_rest_pose();
    let j = skeleton.num_joints();
    if spec.num_joints() != j {
        return Err(Error::shape(
            "motion family joints",
            &[j],
            &[spec.num_joints()],
        ));
    }
    if num_frames == 0 {
        return Err(Error::invalid("num_frames", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std).expect("noise_std validated");
    let mut frames = Array3::<f32>::zeros((num_frames, j, 3));
    for f in 0..num_frames {
        let t = f as f64 / SYNTH_FPS;
        for jj in 0..j {
            let wave = (TAU * spec.frequency[jj] * t + spec.phase[jj]).sin();
            for a in 0..3 {
                let mut v = rest[[jj, a]] + spec.amplitude[[jj, a]] * wave + spec.drift[a] * t;
                if spec.noise_std > 0.0 {
                    v += noise.sample(&mut rng);
                }
                frames[[f, jj, a]] = v as f32;
            }
        }
    }
    Ok(PoseSequence::new(skeleton, SYNTH_FPS, frames)?.with_family_label(Some(spec.family_id)))
}

/// A motion family plus per-sequence jitter ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyTemplate {
    pub base: MotionFamilySpec,
    /// Relative frequency jitter, uniform in `[-x, x]`.
    pub frequency_jitter: f64,
    /// Relative amplitude jitter, uniform in `[-x, x]`.
    pub amplitude_jitter: f64,
}

impl FamilyTemplate {
    /// Number of hand-designed presets; higher ids are drawn at random.
    pub const NUM_PRESETS: u32 = 6;

    /// Built-in families: 0 walk, 1 wave, 2 squat, 3 punch, 4 sway, 5 stretch.
    /// Ids past the presets get a random joint pattern seeded by the id.
    pub fn preset(id: u32) -> Self {
        let j = 8;
        let mut amp = Array2::<f64>::zeros((j, 3));
        let mut freq = Array1::<f64>::from_elem(j, 1.0);
        let mut phase = Array1::<f64>::zeros(j);
        let (x, y, z) = (0, 1, 2);
        match id {
            0 => {
                // walk in place: feet and hands alternate along z
                freq.fill(1.0);
                amp[[6, z]] = 250.0;
                amp[[7, z]] = 250.0;
                phase[7] = PI;
                amp[[4, z]] = 160.0;
                amp[[5, z]] = 160.0;
                phase[4] = PI;
                amp[[0, y]] = 25.0;
                amp[[1, y]] = 25.0;
                freq[0] = 2.0;
                freq[1] = 2.0;
            }
            1 => {
                // right-hand wave
                freq[5] = 1.5;
                amp[[5, x]] = 180.0;
                amp[[5, y]] = 220.0;
                amp[[3, x]] = 20.0;
                freq[3] = 1.5;
            }
            2 => {
                // squat: upper body moves vertically
                for jj in 0..6 {
                    freq[jj] = 0.5;
                    amp[[jj, y]] = 250.0;
                }
                amp[[4, z]] = 120.0;
                amp[[5, z]] = 120.0;
            }
            3 => {
                // alternating punches
                freq[4] = 1.2;
                freq[5] = 1.2;
                phase[5] = PI;
                amp[[4, z]] = 300.0;
                amp[[5, z]] = 300.0;
                amp[[4, y]] = 150.0;
                amp[[5, y]] = 150.0;
                freq[1] = 1.2;
                amp[[1, x]] = 30.0;
            }
            4 => {
                // lateral sway of the upper body
                for (jj, a) in [(1, 60.0), (2, 110.0), (3, 140.0), (4, 120.0), (5, 120.0)] {
                    freq[jj] = 0.7;
                    amp[[jj, x]] = a;
                }
            }
            5 => {
                // both hands raised overhead and lowered
                freq[4] = 0.4;
                freq[5] = 0.4;
                amp[[4, y]] = 450.0;
                amp[[5, y]] = 450.0;
                amp[[4, x]] = 150.0;
                amp[[5, x]] = 150.0;
            }
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + id as u64);
                for jj in 0..j {
                    freq[jj] = rng.random_range(0.3..2.0);
                    phase[jj] = rng.random_range(0.0..TAU);
                    for a in 0..3 {
                        if rng.random_bool(0.4) {
                            amp[[jj, a]] = rng.random_range(20.0..300.0);
                        }
                    }
                }
            }
        }
        Self {
            base: MotionFamilySpec {
                family_id: id,
                amplitude: amp,
                frequency: freq,
                phase,
                drift: [0.0; 3],
                noise_std: 2.0,
            },
            frequency_jitter: 0.15,
            amplitude_jitter: 0.15,
        }
    }

    /// Draws one concrete family instance. A random time shift is folded into
    /// the phases so the instance starts at an arbitrary point of its cycle.
    pub fn instance(&self, seed: u64) -> MotionFamilySpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = self.base.clone();
        let shift: f64 = rng.random_range(0.0..10.0);
        let fj = self.frequency_jitter;
        let aj = self.amplitude_jitter;
        let fscale = 1.0
            + if fj > 0.0 {
                rng.random_range(-fj..=fj)
            } else {
                0.0
            };
        let ascale = 1.0
            + if aj > 0.0 {
                rng.random_range(-aj..=aj)
            } else {
                0.0
            };
        for jj in 0..spec.num_joints() {
            spec.frequency[jj] *= fscale;
            spec.phase[jj] = (spec.phase[jj] + TAU * spec.frequency[jj] * shift).rem_euclid(TAU);
        }
        spec.amplitude.mapv_inplace(|a| a * ascale);
        spec
    }
}

/// A set of jittered sequences drawn from several family templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub families: Vec<u32>,
    pub sequences_per_family: usize,
    pub num_frames: usize,
    pub seed: u64,
}

/// One generated sequence and its stable identifier `f{family}_s{index}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub family_id: u32,
    pub sequence: PoseSequence,
}

/// Generates every sequence of `spec`; each depends only on
/// `(seed, family, index)`, so adding families leaves existing ones intact.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<CorpusEntry>> {
    let mut out = Vec::with_capacity(spec.families.len() * spec.sequences_per_family);
    for &family in &spec.families {
        let template = FamilyTemplate::preset(family);
        for k in 0..spec.sequences_per_family {
            let base = spec
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((family as u64) << 32)
                .wrapping_add(k as u64);
            let instance = template.instance(base);
            out.push(CorpusEntry {
                id: format!("f{family}_s{k}"),
                family_id: family,
                sequence: generate_family(&instance, spec.num_frames, base ^ 0xA5A5_A5A5)?,
            });
        }
    }
    Ok(out)
}
