//! Experiment harness: configuration, training and evaluation runs,
//! parameter counts and oracle runs, all emitting CSV.

pub mod commands;
pub mod settings;

pub use commands::{
    count_params, eval, format_counts, run_oracle, smooth, train, HarnessError, RunManifest,
    AGGREGATE_HEADER, EVAL_HEADER, ORACLE_HEADER, TRACE_HEADER,
};
pub use settings::{Precision, Preset, RunConfig, SettingsError};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "PPA_OUTPUT_ROOT";
