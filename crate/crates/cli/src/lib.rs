//! Scenario files, the batch runner, and report emission for `vpstab`.

pub mod config;
pub mod error;
pub mod report;
pub mod runner;

pub use config::{Check, Overrides, Scenario, ScenarioFile};
pub use error::{CliError, Result};
pub use runner::{run_batch, run_scenario, ScenarioReport};
