//! Single-file archive shared by forecaster checkpoints and cluster models.
//!
//! Layout: one line of JSON (the manifest) terminated by `\n`, then the
//! concatenated blobs as little-endian `f32`. The manifest carries
//! `format_version`, caller metadata, the blob table
//! (`name`, `shape`, byte `offset`, element `len`), the payload size and a
//! SHA-256 of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{ArchiveError, Result};

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    /// Caller metadata, merged into the top level of the manifest.
    pub meta: Map<String, Value>,
    pub blobs: Vec<Blob>,
}

const RESERVED: [&str; 4] = ["format_version", "blobs", "payload_bytes", "payload_sha256"];

impl Archive {
    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut table = Vec::with_capacity(self.blobs.len());
        for blob in &self.blobs {
            table.push(BlobEntry {
                name: blob.name.clone(),
                shape: blob.shape.clone(),
                offset: payload.len(),
                len: blob.data.len(),
            });
            for v in &blob.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut manifest = Map::new();
        manifest.insert("format_version".into(), ARCHIVE_FORMAT_VERSION.into());
        for (k, v) in &self.meta {
            if !RESERVED.contains(&k.as_str()) {
                manifest.insert(k.clone(), v.clone());
            }
        }
        manifest.insert(
            "blobs".into(),
            serde_json::to_value(&table).expect("blob table serializes"),
        );
        manifest.insert("payload_bytes".into(), payload.len().into());
        manifest.insert("payload_sha256".into(), hex_digest(&payload).into());
        let mut out = serde_json::to_vec(&Value::Object(manifest)).expect("manifest serializes");
        out.push(b'\n');
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let corrupted = |m: String| ArchiveError::Corrupted(m);
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupted("missing manifest terminator".into()))?;
        let manifest: Value = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| corrupted(format!("manifest is not valid JSON: {e}")))?;
        let Value::Object(mut manifest) = manifest else {
            return Err(corrupted("manifest is not an object".into()).into());
        };
        let version = manifest
            .get("format_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| corrupted("manifest lacks format_version".into()))?;
        if version != ARCHIVE_FORMAT_VERSION as u64 {
            return Err(ArchiveError::VersionMismatch {
                expected: ARCHIVE_FORMAT_VERSION,
                found: version as u32,
            }
            .into());
        }
        let payload = &bytes[nl + 1..];
        let declared = manifest
            .get("payload_bytes")
            .and_then(Value::as_u64)
            .ok_or_else(|| corrupted("manifest lacks payload_bytes".into()))?
            as usize;
        if payload.len() != declared {
            return Err(corrupted(format!(
                "payload is {} bytes, manifest declares {declared}",
                payload.len()
            ))
            .into());
        }
        let digest = manifest
            .get("payload_sha256")
            .and_then(Value::as_str)
            .ok_or_else(|| corrupted("manifest lacks payload_sha256".into()))?;
        if digest != hex_digest(payload) {
            return Err(corrupted("payload checksum mismatch".into()).into());
        }
        let table: Vec<BlobEntry> =
            serde_json::from_value(manifest.get("blobs").cloned().unwrap_or(Value::Null))
                .map_err(|e| corrupted(format!("bad blob table: {e}")))?;
        let mut blobs = Vec::with_capacity(table.len());
        for entry in table {
            let end = entry.offset + entry.len * 4;
            if end > payload.len() || entry.shape.iter().product::<usize>() != entry.len {
                return Err(corrupted(format!(
                    "blob `{}` does not fit its declared extent",
                    entry.name
                ))
                .into());
            }
            let data = payload[entry.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blobs.push(Blob {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        for key in RESERVED {
            manifest.remove(key);
        }
        Ok(Self {
            meta: manifest,
            blobs,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    pub fn blob(&self, name: &str) -> Result<&Blob> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| ArchiveError::MissingBlob(name.to_string()).into())
    }

    /// Typed view of one metadata field.
    pub fn meta_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let value = self
            .meta
            .get(key)
            .cloned()
            .ok_or_else(|| ArchiveError::Corrupted(format!("manifest lacks `{key}`")))?;
        serde_json::from_value(value)
            .map_err(|e| ArchiveError::Corrupted(format!("field `{key}`: {e}")).into())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn sample() -> Archive {
        let mut meta = Map::new();
        meta.insert("kind".into(), "test".into());
        Archive {
            meta,
            blobs: vec![
                Blob {
                    name: "a".into(),
                    shape: vec![2, 2],
                    data: vec![1.0, -2.0, 3.5, f32::MIN_POSITIVE],
                },
                Blob {
                    name: "b".into(),
                    shape: vec![1],
                    data: vec![0.1],
                },
            ],
        }
    }

    #[test]
    fn round_trip() {
        let a = sample();
        assert_eq!(Archive::decode(&a.encode()).unwrap(), a);
    }

    #[test]
    fn truncation_and_bit_flips_are_corruption() {
        let bytes = sample().encode();
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Archive::decode(short),
            Err(Error::Archive(ArchiveError::Corrupted(_)))
        ));
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 1] ^= 0x40;
        assert!(matches!(
            Archive::decode(&flipped),
            Err(Error::Archive(ArchiveError::Corrupted(_)))
        ));
        assert!(matches!(
            Archive::decode(b"{\"x\":1"),
            Err(Error::Archive(ArchiveError::Corrupted(_)))
        ));
    }

    #[test]
    fn version_mismatch() {
        let bytes = sample().encode();
        let text =
            String::from_utf8_lossy(&bytes).replace("\"format_version\":1", "\"format_version\":7");
        assert!(matches!(
            Archive::decode(text.as_bytes()),
            Err(Error::Archive(ArchiveError::VersionMismatch {
                expected: 1,
                found: 7
            }))
        ));
    }
}
