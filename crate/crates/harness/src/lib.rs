//! Experiment runner for `gp-select`.
//!
//! A run reads one TOML file, executes every (policy, seed) pair and writes
//! into the output directory:
//!
//! * `traces/<policy>_seed<k>.jsonl`: one JSON object per round;
//! * `regret.csv`: regret at each checkpoint, per seed and seed-mean;
//! * `timing.csv`: median wall time and variance refreshes, lazy vs naive;
//! * `summary.json`: seed-mean value, diversity and the greedy reference;
//! * `manifest.json`: resolved config, config hash and dataset hash.

pub mod compare;
pub mod config;
pub mod experiment;

pub use config::{apply_override, ExperimentConfig, LazyMode};
pub use experiment::run;
