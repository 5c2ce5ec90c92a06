//! Scenario-driven front end for `qest-core`: simulation traces, pulse
//! optimization, bootstrap estimation and Bloch-sphere sweeps, written as
//! CSV and JSON.

pub mod commands;
pub mod error;
pub mod output;
pub mod scenario;

pub use commands::{resolve_threads, run, run_text, Command, RunOptions, RunOutcome};
pub use error::CliError;
pub use scenario::Scenario;
