//! JSON sidecar stored next to a dump as `<stem>.meta.json`.
//!
//! Holds what the fixed binary header has no room for: extraction metadata,
//! per-channel SHA-256 checksums of the raw payload bytes, and optional
//! reference scores computed by the producer for cross-checking.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DumpMeta;
use crate::error::{OodError, Result};
use crate::io::dump::{DumpHeader, HEADER_LEN};

pub fn sidecar_path(dump: &Path) -> PathBuf {
    dump.with_extension("meta.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub t: usize,
    #[serde(default)]
    pub meta: DumpMeta,
    /// Channel name to lowercase hex SHA-256 of that channel's bytes.
    #[serde(default)]
    pub checksums: BTreeMap<String, String>,
    /// Method id to per-sample scores.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reference_scores: BTreeMap<String, Vec<f64>>,
}

/// Byte range of every channel present, in file order.
pub fn channel_ranges(h: &DumpHeader) -> Vec<(&'static str, Range<usize>)> {
    let mut out = Vec::new();
    let mut pos = HEADER_LEN;
    let mut push = |name, len: usize| {
        out.push((name, pos..pos + len));
        pos += len;
    };
    push("features", h.n * h.d * 4);
    if h.flags.labels {
        push("labels", h.n * 4);
    }
    if h.flags.logits {
        push("logits", h.n * h.c * 4);
    }
    if h.flags.dropout {
        push("dropout", h.n * h.t * h.c * 4);
    }
    if h.flags.odin {
        push("odin", h.n * h.c * 4);
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Sidecar {
    /// `bytes` must be the complete encoded dump described by `header`.
    pub fn describe(header: &DumpHeader, bytes: &[u8], meta: DumpMeta) -> Result<Self> {
        let checksums = channel_ranges(header)
            .into_iter()
            .map(|(name, r)| {
                let slice = bytes
                    .get(r)
                    .ok_or_else(|| OodError::InvalidData(format!("{name} range out of bounds")))?;
                Ok((name.to_string(), sha256_hex(slice)))
            })
            .collect::<Result<_>>()?;
        Ok(Sidecar {
            n: header.n,
            d: header.d,
            c: header.c,
            t: header.t,
            meta,
            checksums,
            reference_scores: BTreeMap::new(),
        })
    }

    /// Checks dimensions and every listed checksum against a decoded dump.
    pub fn verify(&self, header: &DumpHeader, bytes: &[u8]) -> Result<()> {
        let ours = (header.n, header.d, header.c, header.t);
        let theirs = (self.n, self.d, self.c, self.t);
        if ours != theirs {
            return Err(OodError::DimensionMismatch(format!(
                "sidecar says (N, d, C, T) = {theirs:?}, dump has {ours:?}"
            )));
        }
        let ranges: BTreeMap<&str, Range<usize>> = channel_ranges(header).into_iter().collect();
        for (name, expected) in &self.checksums {
            let range = ranges
                .get(name.as_str())
                .ok_or_else(|| OodError::ChecksumMismatch(format!("{name} (channel absent)")))?;
            let slice = bytes
                .get(range.clone())
                .ok_or_else(|| OodError::ChecksumMismatch(name.clone()))?;
            if !sha256_hex(slice).eq_ignore_ascii_case(expected) {
                return Err(OodError::ChecksumMismatch(name.clone()));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}
