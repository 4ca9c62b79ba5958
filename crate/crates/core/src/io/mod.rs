//! On-disk formats: feature dumps, their sidecars, linear heads, fitted
//! statistics bundles and benchmark manifests.

mod codec;
pub mod dump;
pub mod head;
pub mod manifest;
pub mod sidecar;
pub mod stats;

pub use dump::{decode_dump, encode_dump, read_dump, write_dump, Dump, DumpFlags, DumpHeader};
pub use head::{decode_head, encode_head, read_head, write_head};
pub use manifest::{parse_manifest, read_manifest, write_manifest, Manifest, RunSpec};
pub use sidecar::{sidecar_path, Sidecar};
pub use stats::{decode_stats, encode_stats, load_stats, save_stats};
