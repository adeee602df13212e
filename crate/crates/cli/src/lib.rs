//! Command-line front end for `mfoffload`.
//!
//! Every command writes its data as CSV (first line `#schema=...`, then a
//! header row), a JSON summary where there is one, and a run manifest
//! `<stem>.manifest.json` from which `mfoffload rerun` repeats the run.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod scenario;

pub use commands::{parse_policy, run, Cli, Command};
pub use error::CliError;
pub use manifest::RunManifest;
pub use scenario::{parse_scenario, parse_scenario_str, ScenarioError};
