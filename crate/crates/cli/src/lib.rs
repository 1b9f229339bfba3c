//! Benchmark driver for garnerdb: db_bench style micro-benchmarks and
//! the YCSB core workloads, shared by the CLI binary and the
//! acceptance tests.

pub mod driver;
pub mod report;
pub mod workload;

pub use driver::{BenchReport, BenchSession, DbBench};
pub use workload::{WorkloadSpec, YcsbWorkload};
