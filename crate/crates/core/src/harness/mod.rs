//! Benchmark protocol, file formats and report types used by the CLI.

mod bench;
pub mod text;
pub mod weight_file;

pub use bench::{
    available_memory, bench_generation, bench_mlp, bench_mlp_with, geometric_mean, random_sequences, required_bytes,
    BenchCell, BenchConfig, BenchReport, Environment, GenBenchConfig, GenReport, GenResult, Variant, BENCH_SCHEMA,
    GEN_SCHEMA,
};
