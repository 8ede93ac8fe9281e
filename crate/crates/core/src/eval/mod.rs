//! Metrics, timing, shift diagnostics and the synthetic benchmark.

pub mod benchmark;
pub mod methods;
pub mod metrics;
pub mod shift;
pub mod synth;
pub mod timing;

pub use methods::{EvalReport, Method};
pub use metrics::{auc, rmse};
pub use shift::{shift_diagnostic, ShiftConfig, ShiftReport};
pub use synth::{synth_benchmark, ShiftMode, ShiftProfile};
pub use timing::{thread_count, time_overhead, Overhead, THREADS_ENV};
