//! Command-line surface of the PIHAM model: dataset ingestion, fitted-model
//! files, reports and the `generate`, `fit`, `cv`, `predict`, `ppc` and
//! `interpret` subcommands.

pub mod commands;
pub mod error;
pub mod ingest;
pub mod manifest;
pub mod model_file;
pub mod output;
pub mod reports;

pub use commands::{run, run_from, Cli};
pub use error::{CliError, CliResult};
