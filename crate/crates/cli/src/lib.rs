//! Data loading, synthetic data, experiment configuration and runners
//! behind the `kdey` command.

pub mod config;
pub mod dataset;
mod error;
pub mod experiment;

pub use config::{ExperimentConfig, GridSpec, MethodEntry, ProtocolSection};
pub use dataset::{generate_synthetic, load_csv, write_csv, LoadedDataset, SyntheticSpec};
pub use error::{CliError, Result};
pub use experiment::{run_experiment, sensitivity_sweep, RunSummary, SweepAxis, SweepRow};
