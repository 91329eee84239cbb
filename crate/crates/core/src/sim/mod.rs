//! Closed-loop simulation harness: scenario files, the fixed-step engine,
//! trace output and post-processing.

pub mod analysis;
pub mod engine;
pub mod scenario;
pub mod summary;
pub mod trace;

pub use analysis::{analyze_window, compare_windows, ComparisonReport, WindowAnalysis};
pub use engine::{run_scenario, RunOutput};
pub use scenario::{presets, Scenario, ScenarioError};
pub use summary::RunSummary;
pub use trace::{read_trace, write_trace, TraceRecord};
