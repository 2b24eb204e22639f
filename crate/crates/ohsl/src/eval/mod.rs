//! Benchmark harness: synthetic multi-label data, ranking metrics, and the
//! chunked streaming protocol with checkpointed mAP and update-cost
//! accounting.

pub mod data;
pub mod metrics;
pub mod stream;

pub use data::{synth_dataset, Dataset, SynthConfig};
pub use metrics::{average_precision, mean_average_precision, GroundTruth};
pub use stream::{
    compare_variants, run_stream, update_cost_profile, CheckpointRecord, CostProfile,
    StreamConfig, StreamOutcome, VariantGrid, VariantReport,
};
