//! File formats, configuration and the experiment-matrix runner for
//! `samosa-core`.

pub mod cli;
pub mod config;
pub mod output;
pub mod runner;

pub use config::{parse_config, parse_config_str, write_config, ConfigError, FileConfig};
pub use runner::{run_matrix, summarize, RunError, RunManifest, SummaryRow};
