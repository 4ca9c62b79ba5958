//! `manifest.json`: which dumps make up a benchmark.
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Dumps for one (backbone, seed) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub backbone: String,
    pub seed: u64,
    pub id_train: PathBuf,
    pub id_val: PathBuf,
    pub id_test: PathBuf,
    pub head: PathBuf,
    /// Group name (`near`, `far_bp`, `far_general`, or any other) to dump
    /// paths, one per OoD dataset.
    pub ood_groups: BTreeMap<String, Vec<PathBuf>>,
}

impl RunSpec {
    /// Every test-time path: the ID test split and all OoD dumps.
    pub fn test_paths(&self) -> impl Iterator<Item = &PathBuf> {
        std::iter::once(&self.id_test).chain(self.ood_groups.values().flatten())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub backbones: Vec<String>,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Dataset name used in reports: the file stem of its dump.
pub fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn run(&self, backbone: &str, seed: u64) -> Option<&RunSpec> {
        self.runs.iter().find(|r| r.backbone == backbone && r.seed == seed)
    }

    /// Group names across all runs, sorted.
    pub fn group_names(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.runs.iter().flat_map(|r| r.ood_groups.keys()).collect();
        set.into_iter().cloned().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OodError::Manifest(m));
        if self.version != MANIFEST_VERSION {
            return bad(format!("unsupported manifest version {}", self.version));
        }
        if self.backbones.is_empty() || self.seeds.is_empty() {
            return bad("at least one backbone and one seed are required".into());
        }
        let backbones: BTreeSet<&String> = self.backbones.iter().collect();
        if backbones.len() != self.backbones.len() {
            return bad("duplicate backbone id".into());
        }
        if backbones.iter().any(|b| b.is_empty()) {
            return bad("empty backbone id".into());
        }
        let seeds: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if seeds.len() != self.seeds.len() {
            return bad("duplicate seed".into());
        }
        let mut seen = BTreeSet::new();
        for r in &self.runs {
            if !backbones.contains(&r.backbone) {
                return bad(format!("run names unknown backbone {:?}", r.backbone));
            }
            if !seeds.contains(&r.seed) {
                return bad(format!("run names unknown seed {}", r.seed));
            }
            if !seen.insert((&r.backbone, r.seed)) {
                return bad(format!("two runs for ({}, {})", r.backbone, r.seed));
            }
            if r.ood_groups.is_empty() {
                return bad(format!("run ({}, {}) has no OoD groups", r.backbone, r.seed));
            }
            for (name, paths) in &r.ood_groups {
                if name.is_empty() || paths.is_empty() {
                    return bad(format!("OoD group {name:?} is empty"));
                }
                let stems: BTreeSet<String> = paths.iter().map(|p| dataset_name(p)).collect();
                if stems.len() != paths.len() {
                    return bad(format!("OoD group {name:?} repeats a dataset name"));
                }
            }
            let empty = [&r.id_train, &r.id_val, &r.head]
                .into_iter()
                .chain(r.test_paths())
                .any(|p| p.as_os_str().is_empty());
            if empty {
                return bad("empty path".into());
            }
        }
        Ok(())
    }
}

/// Parses and validates manifest text. Relative paths will resolve against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Manifest> {
    let mut m: Manifest = serde_json::from_str(text)?;
    m.base_dir = base_dir.to_path_buf();
    m.validate()?;
    Ok(m)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    let dir = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, dir)
}

pub fn write_manifest(m: &Manifest, path: &Path) -> Result<()> {
    m.validate()?;
    let mut s = serde_json::to_string_pretty(m)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}
