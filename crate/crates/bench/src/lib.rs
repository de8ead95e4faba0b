//! Benchmark and verification harness for the retention operators in
//! `vir-core`: throughput and accounted-memory sweeps, scaling-exponent fits,
//! the cross-mode equivalence suite, a finite-difference gradient check and
//! CSV/JSON result files.

pub mod emit;
pub mod gradcheck;
pub mod runner;
pub mod scaling;
pub mod spec;
pub mod verify;

pub use emit::{emit, Format, CSV_HEADER};
pub use gradcheck::{run_gradcheck, GradReport};
pub use runner::run_benchmark;
pub use scaling::fit_scaling_exponent;
pub use spec::{BenchRecord, BenchSpec, Mask, Mode, Status};
pub use verify::{run_equivalence_suite, EquivalenceReport};
