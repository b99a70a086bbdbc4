//! On-disk formats shared by every stage of the pipeline.

pub mod manifest;
pub mod report;
pub mod shard;

pub use manifest::{ConceptManifest, ConceptPairs, ProbeDataset, ProbeManifest, RowSelection};
pub use report::{config_hash, read_json, write_csv, write_json, EvalReport};
pub use shard::ActivationShard;
