//! Pose data model: skeletons, sequences, forecast windows.
//!
//! Coordinates are millimeters throughout and stored as `f32`, matching the
//! on-disk `poseseq` payload so that file round-trips are bit-exact.

mod format;
mod shuffle;
mod synth;

pub use format::{decode_sequence, encode_sequence, read_sequence, write_sequence, SequenceHeader};
pub use shuffle::{shuffle_frames, shuffle_joints};
pub use synth::{
    canonical_rest_pose, generate_corpus, generate_family, CorpusEntry, CorpusSpec, FamilyTemplate,
    MotionFamilySpec, SYNTH_FPS,
};

use ndarray::{s, Array3, ArrayView3};

use crate::error::{Error, Result};

/// Joint names and the parent tree connecting them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    joint_names: Vec<String>,
    parent_index: Vec<i32>,
}

impl Skeleton {
    pub fn new(joint_names: Vec<String>, parent_index: Vec<i32>) -> Result<Self> {
        let j = joint_names.len();
        if j < 2 {
            return Err(Error::invalid(
                "skeleton",
                format!("need at least 2 joints, got {j}"),
            ));
        }
        if parent_index.len() != j {
            return Err(Error::invalid(
                "skeleton",
                format!("{j} joint names but {} parent indices", parent_index.len()),
            ));
        }
        let roots = parent_index.iter().filter(|&&p| p == -1).count();
        if roots != 1 {
            return Err(Error::invalid(
                "skeleton",
                format!("expected exactly one root, found {roots}"),
            ));
        }
        for (i, &p) in parent_index.iter().enumerate() {
            if p != -1 && (p < 0 || p as usize >= j || p as usize == i) {
                return Err(Error::invalid(
                    "skeleton",
                    format!("joint {i} has invalid parent {p}"),
                ));
            }
        }
        // Every joint must reach the root without revisiting a node.
        for start in 0..j {
            let mut node = start;
            let mut steps = 0;
            while parent_index[node] != -1 {
                node = parent_index[node] as usize;
                steps += 1;
                if steps > j {
                    return Err(Error::invalid(
                        "skeleton",
                        format!("cycle through joint {start}"),
                    ));
                }
            }
        }
        Ok(Self {
            joint_names,
            parent_index,
        })
    }

    /// The fixed 8-joint stick figure used by the synthetic generator.
    pub fn canonical() -> Self {
        let names = [
            "pelvis",
            "chest",
            "neck",
            "head",
            "left_hand",
            "right_hand",
            "left_foot",
            "right_foot",
        ];
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            vec![-1, 0, 1, 2, 2, 2, 0, 0],
        )
        .expect("canonical skeleton is a valid tree")
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parent_index(&self) -> &[i32] {
        &self.parent_index
    }
}

/// A timed series of 3D poses, shape `(num_frames, J, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    skeleton: Skeleton,
    fps: f64,
    frames: Array3<f32>,
    family_label: Option<u32>,
}

impl PoseSequence {
    pub fn new(skeleton: Skeleton, fps: f64, frames: Array3<f32>) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(
                "fps",
                format!("must be positive and finite, got {fps}"),
            ));
        }
        let (n, j, c) = frames.dim();
        if n == 0 {
            return Err(Error::invalid("sequence", "needs at least one frame"));
        }
        if j != skeleton.num_joints() || c != 3 {
            return Err(Error::shape(
                "sequence frames",
                &[n, skeleton.num_joints(), 3],
                &[n, j, c],
            ));
        }
        if let Some(((f, jj, a), _)) = frames.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(crate::error::FormatError::NonFinite {
                frame: f,
                joint: jj,
                axis: a,
            }
            .into());
        }
        Ok(Self {
            skeleton,
            fps,
            frames,
            family_label: None,
        })
    }

    pub fn with_family_label(mut self, label: Option<u32>) -> Self {
        self.family_label = label;
        self
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> ArrayView3<'_, f32> {
        self.frames.view()
    }

    pub fn num_frames(&self) -> usize {
        self.frames.dim().0
    }

    pub fn num_joints(&self) -> usize {
        self.skeleton.num_joints()
    }

    pub fn family_label(&self) -> Option<u32> {
        self.family_label
    }
}

/// An (observation, future) pair cut from one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSample {
    pub observed: Array3<f32>,
    pub future: Array3<f32>,
    pub source_id: String,
    /// Frame offset of the first observed frame in the source sequence.
    pub offset: usize,
    pub family_label: Option<u32>,
}

impl ForecastSample {
    pub fn obs_len(&self) -> usize {
        self.observed.dim().0
    }

    pub fn horizon(&self) -> usize {
        self.future.dim().0
    }

    pub fn num_joints(&self) -> usize {
        self.observed.dim().1
    }
}

/// Number of windows [`window`] yields for the given lengths.
pub fn window_count(num_frames: usize, obs_len: usize, horizon: usize, stride: usize) -> usize {
    let need = obs_len + horizon;
    if stride == 0 || num_frames < need {
        0
    } else {
        (num_frames - need) / stride + 1
    }
}

/// Cuts every contiguous `(obs_len, horizon)` split starting at multiples of
/// `stride`. A sequence shorter than `obs_len + horizon` yields no samples.
pub fn window(
    seq: &PoseSequence,
    source_id: &str,
    obs_len: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<ForecastSample>> {
    if obs_len == 0 || horizon == 0 {
        return Err(Error::invalid(
            "window",
            "observation and horizon lengths must be >= 1",
        ));
    }
    if stride == 0 {
        return Err(Error::invalid("window", "stride must be >= 1"));
    }
    let count = window_count(seq.num_frames(), obs_len, horizon, stride);
    let frames = seq.frames();
    Ok((0..count)
        .map(|k| {
            let start = k * stride;
            ForecastSample {
                observed: frames.slice(s![start..start + obs_len, .., ..]).to_owned(),
                future: frames
                    .slice(s![start + obs_len..start + obs_len + horizon, .., ..])
                    .to_owned(),
                source_id: source_id.to_string(),
                offset: start,
                family_label: seq.family_label(),
            }
        })
        .collect())
}
