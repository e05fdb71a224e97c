//! Scenario runner: TOML scenarios in, JSON-lines ledgers and CSV tables out.

pub mod commands;
pub mod config;
pub mod error;
pub mod ledger;
pub mod report;

pub use config::Scenario;
pub use error::{CliError, Result};
