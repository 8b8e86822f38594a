//! Experiment configuration, execution and output.

pub mod config;
pub mod output;
pub mod run;

pub use config::{Aggregation, ExperimentConfig, Policy};
pub use output::{load_params, save_params, write_outputs};
pub use run::{
    collect_pretrain_samples, pretrain_transfer_qpn, run_experiment, run_experiment_with, run_single, ExperimentResult,
    RunResult,
};
