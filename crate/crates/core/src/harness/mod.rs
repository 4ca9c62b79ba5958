//! Benchmark orchestration: sweeps, the per-cell protocol, report emission
//! and synthetic benchmarks.

pub mod access;
pub mod report;
pub mod run;
pub mod sweep;
pub mod synth;

use sha2::{Digest, Sha256};

pub use access::{AccessGuard, AccessRecord, Phase};
pub use report::{correlation_study, emit_report, render_csv, render_json, render_table, GroupCorrelation};
pub use run::{
    run_benchmark, run_benchmark_instrumented, Benchmark, BestBackbone, CellAccessLog, CellRow,
    EvalReport, Failure, RunOptions,
};
pub use sweep::{grid_points, sweep, DumpData, Grid, GridPoint, SweepOutcome, SweepPlan};
pub use synth::{default_sweep_plan, gen_synthetic_benchmark, generate_cell, SynthCell, SynthSpec};

/// Stable 64-bit seed from a label.
pub(crate) fn derive_seed(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
