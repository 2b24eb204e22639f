//! Criterion benchmarks for the hashing, learning, and search hot paths.
//! See `benches/pipeline.rs`; this crate exports nothing.
