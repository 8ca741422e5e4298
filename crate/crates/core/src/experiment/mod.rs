//! Experiment driver: configuration, training loop, reports and evaluation.

mod config;
mod problem;
mod train;

pub use config::{DatasetConfig, DatasetSource, ExperimentConfig, OptimizerConfig, Task};
pub use problem::{Dataset, Pairs, Problem, Split};
pub use train::{
    evaluate, evaluate_on, load_dataset, load_run_checkpoint, synthetic_config, train, train_on,
    Evaluation, RunCheckpoint, RunReport, SeedResult,
};
