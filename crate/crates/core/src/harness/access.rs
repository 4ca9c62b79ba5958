//! Phase-aware file access for one benchmark cell.
//!
//! Every dump or head read by the harness goes through [`AccessGuard`], which
//! logs the read with the current phase and refuses test paths while
//! hyperparameters are being tuned.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::LinearHead;
use crate::error::{OodError, Result};
use crate::io::{read_dump, read_head, Dump};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Loading the head and the ID training and validation dumps.
    Fit,
    /// Loading OoD dumps and carving out the tuning fraction.
    Split,
    /// Hyperparameter selection; test paths are off limits.
    Sweep,
    /// Final scoring.
    Test,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Fit => "fit",
            Phase::Split => "split",
            Phase::Sweep => "sweep",
            Phase::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub phase: Phase,
    pub path: PathBuf,
    pub allowed: bool,
}

#[derive(Debug)]
pub struct AccessGuard {
    phase: Mutex<Phase>,
    protected: BTreeSet<PathBuf>,
    log: Mutex<Vec<AccessRecord>>,
}

impl AccessGuard {
    /// `protected` paths may not be read during [`Phase::Sweep`].
    pub fn new(protected: impl IntoIterator<Item = PathBuf>) -> Self {
        Self {
            phase: Mutex::new(Phase::Fit),
            protected: protected.into_iter().collect(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn phase(&self) -> Phase {
        *self.phase.lock().expect("phase lock")
    }

    pub fn enter(&self, phase: Phase) {
        *self.phase.lock().expect("phase lock") = phase;
    }

    pub fn log(&self) -> Vec<AccessRecord> {
        self.log.lock().expect("log lock").clone()
    }

    /// Records the access and fails if it is not allowed in the current phase.
    pub fn check(&self, path: &Path) -> Result<()> {
        let phase = self.phase();
        let allowed = !(phase == Phase::Sweep && self.protected.contains(path));
        self.log.lock().expect("log lock").push(AccessRecord {
            phase,
            path: path.to_path_buf(),
            allowed,
        });
        if allowed {
            Ok(())
        } else {
            Err(OodError::AccessViolation {
                path: path.to_path_buf(),
                phase: phase.to_string(),
            })
        }
    }

    pub fn read_dump(&self, path: &Path) -> Result<Dump> {
        self.check(path)?;
        read_dump(path)
    }

    pub fn read_head(&self, path: &Path) -> Result<LinearHead> {
        self.check(path)?;
        read_head(path)
    }
}
