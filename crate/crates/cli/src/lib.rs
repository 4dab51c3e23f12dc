//! Scenario configuration, run orchestration and file formats for `hflow`.

pub mod config;
pub mod output;
pub mod run;
pub mod scenario;
pub mod verify;
