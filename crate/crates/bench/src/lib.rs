//! Benchmark harness for the code-tree engine: suites, strategy runners,
//! reports, and the wiring behind the `toc` command.

pub mod generate;
pub mod report;
pub mod runner;
pub mod setup;
pub mod suite;

pub use report::{emit_report, BenchReport, ReportFormat, ReportRow};
pub use runner::{run_benchmark, run_tasks, BenchEnv, Strategy};
pub use suite::{load_suite, SuiteFile};
