//! The `poseseq` v1 file format.
//!
//! A single-line UTF-8 JSON header terminated by `\n`, followed by
//! `num_frames * J * 3` little-endian `f32` values in (frame, joint, xyz)
//! row-major order.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use serde::Serialize;
use serde_json::Value;

use super::{PoseSequence, Skeleton};
use crate::error::{FormatError, Result};

pub const POSESEQ_VERSION: u64 = 1;

/// Header fields, in the order they are written.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceHeader {
    pub version: u64,
    pub fps: f64,
    pub units: String,
    pub joint_names: Vec<String>,
    pub parent_index: Vec<i32>,
    pub num_frames: usize,
}

fn malformed(field: &str, reason: impl Into<String>) -> FormatError {
    FormatError::MalformedHeader {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn inconsistent(field: &str, reason: impl Into<String>) -> FormatError {
    FormatError::InconsistentHeader {
        field: field.to_string(),
        reason: reason.into(),
    }
}

pub fn encode_sequence(seq: &PoseSequence) -> Vec<u8> {
    let header = SequenceHeader {
        version: POSESEQ_VERSION,
        fps: seq.fps(),
        units: "mm".to_string(),
        joint_names: seq.skeleton().joint_names().to_vec(),
        parent_index: seq.skeleton().parent_index().to_vec(),
        num_frames: seq.num_frames(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(seq.frames().len() * 4);
    for v in seq.frames().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_header(line: &[u8]) -> std::result::Result<SequenceHeader, FormatError> {
    let text =
        std::str::from_utf8(line).map_err(|e| malformed("header", format!("not UTF-8: {e}")))?;
    let value: Value = serde_json::from_str(text)
        .map_err(|e| malformed("header", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("header", "not a JSON object"))?;
    let get = |field: &str| obj.get(field).ok_or_else(|| malformed(field, "missing"));

    let version = get("version")?
        .as_u64()
        .ok_or_else(|| malformed("version", "expected a non-negative integer"))?;
    if version != POSESEQ_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let fps = get("fps")?
        .as_f64()
        .ok_or_else(|| malformed("fps", "expected a number"))?;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(malformed("fps", format!("must be positive, got {fps}")));
    }
    let units = get("units")?
        .as_str()
        .ok_or_else(|| malformed("units", "expected a string"))?;
    if units != "mm" {
        return Err(FormatError::UnsupportedUnits(units.to_string()));
    }
    let joint_names = get("joint_names")?
        .as_array()
        .ok_or_else(|| malformed("joint_names", "expected an array"))?
        .iter()
        .map(|v| v.as_str().map(str::to_string))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| malformed("joint_names", "entries must be strings"))?;
    let parent_index = get("parent_index")?
        .as_array()
        .ok_or_else(|| malformed("parent_index", "expected an array"))?
        .iter()
        .map(|v| v.as_i64().and_then(|i| i32::try_from(i).ok()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| malformed("parent_index", "entries must be integers"))?;
    let num_frames = get("num_frames")?
        .as_u64()
        .ok_or_else(|| malformed("num_frames", "expected a non-negative integer"))?
        as usize;
    if num_frames == 0 {
        return Err(malformed("num_frames", "must be >= 1"));
    }
    // Converters may also declare J explicitly; it must agree with the names.
    if let Some(j) = obj.get("num_joints") {
        let j = j
            .as_u64()
            .ok_or_else(|| malformed("num_joints", "expected a non-negative integer"))?;
        if j as usize != joint_names.len() {
            return Err(inconsistent(
                "num_joints",
                format!(
                    "declares {j} joints but joint_names lists {}",
                    joint_names.len()
                ),
            ));
        }
    }
    if parent_index.len() != joint_names.len() {
        return Err(inconsistent(
            "parent_index",
            format!(
                "{} entries for {} joint names",
                parent_index.len(),
                joint_names.len()
            ),
        ));
    }
    Ok(SequenceHeader {
        version,
        fps,
        units: units.to_string(),
        joint_names,
        parent_index,
        num_frames,
    })
}

pub fn decode_sequence(bytes: &[u8]) -> Result<PoseSequence> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("header", "no terminating newline"))?;
    let header = parse_header(&bytes[..newline])?;
    let skeleton = Skeleton::new(header.joint_names, header.parent_index)
        .map_err(|e| inconsistent("parent_index", e.to_string()))?;
    let j = skeleton.num_joints();
    let payload = &bytes[newline + 1..];
    let expected = header.num_frames * j * 3 * 4;
    if payload.len() != expected {
        return Err(FormatError::PayloadLength {
            expected,
            actual: payload.len(),
        }
        .into());
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite {
            frame: i / (j * 3),
            joint: (i / 3) % j,
            axis: i % 3,
        }
        .into());
    }
    let frames = Array3::from_shape_vec((header.num_frames, j, 3), values).expect("length checked");
    PoseSequence::new(skeleton, header.fps, frames)
}

pub fn write_sequence(seq: &PoseSequence, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_sequence(seq))?;
    Ok(())
}

pub fn read_sequence(path: impl AsRef<Path>) -> Result<PoseSequence> {
    decode_sequence(&fs::read(path)?)
}
