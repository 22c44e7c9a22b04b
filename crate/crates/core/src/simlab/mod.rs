//! Synthetic data, experiment runners, CSV output and the command line.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod generate;
pub mod record;
pub mod stats;

pub use config::{ExperimentConfig, ExperimentKind, GridConfig};
pub use experiments::{run_experiment, run_records, summarize, Summary};
pub use generate::{derive_seed, generate_dataset, DatasetSpec, Design, SignalSpec};
pub use record::{read_csv, write_csv_atomic, ExperimentRecord, CSV_COLUMNS};
