//! Configuration-driven experiment runner.

pub mod config;
pub mod experiment;

pub use config::{parse_config, DatasetKind, ExperimentSpec};
pub use experiment::{
    build_model, depth_sweep, load_datasets, mean_weight_table, read_weight_dump, repeat_and_summarize,
    repeat_with_seeds, run_experiment, WeightDump,
};
