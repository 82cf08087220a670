//! Trial orchestration, feature-significance counting, and persistence.

pub mod config;
pub mod experiment;
pub mod io;
pub mod significance;

pub use config::{DataSource, ExperimentConfig, Method};
pub use experiment::{run_experiment, run_method, subsample_to_min, sweep, ExperimentOutput, MethodOutcome, ExperimentSummary, TrialReport, TrialTiming};
pub use io::{emit_results, load_csv, reload_summaries, reload_trials, LoadedCsv};
pub use significance::{significance_report, RankMode, SignificanceReport};
