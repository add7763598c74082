//! Config loading, the experiment registry and the run driver behind the
//! `stochevo` binary.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod runner;

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentName};
pub use error::{HarnessError, Result};
pub use output::ExperimentOutput;
pub use runner::{output_dir, run, RunReport};
