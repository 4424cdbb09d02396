//! Monte-Carlo studies over grids of policies, fusion modes and fault rates.

pub mod config;
pub mod harness;
pub mod report;

pub use config::{Cell, ConfigOverrides, ExperimentConfig, Preset};
pub use harness::{mean_ci, run_mc, CellResult, CurveStats, ResultTable};
pub use report::{emit_csv, paired_comparisons, paired_test, read_results, summarize, PairedComparison};
