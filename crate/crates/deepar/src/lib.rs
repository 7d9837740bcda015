//! Command-line front end: JSON-lines panels, model files, forecast
//! records, run manifests and the `deepar` subcommands.

pub mod cli;
pub mod clock;
pub mod config;
pub mod data;
pub mod error;
pub mod forecasts;
pub mod manifest;
pub mod model_file;
pub mod parallel;
pub mod report;

pub use error::{Error, Result};
