//! Post-hoc out-of-distribution detection toolkit.
//!
//! Fits training-time statistics from exported classifier features, scores
//! samples with 22 post-hoc detectors, and runs a seeded benchmark protocol
//! over feature dumps.

pub mod data;
pub mod decision;
pub mod error;
pub mod fit;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod scores;

pub use data::{AugmentedDump, FeatureSet, LinearHead, ScoreVector};
pub use error::{OodError, Result};
pub use scores::{Method, MethodConfig};
