//! Experiment orchestration: configuration, the round loop, evaluation and
//! output files.

pub mod config;
pub mod metrics;
pub mod output;
mod run;
pub mod suite;

pub use config::{load_config, AttackName, DatasetKind, ResolvedConfig, RunConfig, ValueSource};
pub use metrics::{
    accuracy_volatility, compare_tables, metrics_csv, parse_metrics_csv, Comparison, MetricsRow,
    NodeRow,
};
pub use output::{write_atomic, write_outputs, WrittenFiles};
pub use run::{compare_runs, idx_dir, reference_model, run_experiment, RunOptions, RunOutput, BUILD_ID};
pub use suite::{run_suite, suite_configs, Scale, SuiteOutput};

use crate::seed::SeedStreams;

/// Named, independent random streams for `master_seed`.
pub fn seed_streams(master_seed: u64) -> SeedStreams {
    SeedStreams::new(master_seed)
}
