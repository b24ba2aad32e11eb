//! Library surface of the experiment driver, used by the binary and the
//! acceptance test suite.

pub mod config;
pub mod error;
pub mod export;
pub mod runner;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
