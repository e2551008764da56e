//! Experiment plans, result tables, SVG plots and the command-line front end.

pub mod cli;
mod plan;
mod runner;
mod svg;
mod table;

pub use plan::{merge_config, DataSource, ExperimentPlan, LoadedData, RunSpec, BASELINE_RUN, DEFAULT_SEEDS};
pub use runner::{geometry_self_test, run_ablation, run_experiment, ORDERING_TOLERANCE};
pub use svg::{ablation_svg, emit_learning_curve, learning_curve_svg};
pub use table::{OrderingCheck, ResultTable, RunResult, RunSummary, SeedResult, Stat, TABLE_HEADER};
