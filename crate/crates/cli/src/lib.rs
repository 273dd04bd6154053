//! Experiment harness for the STAR-RIS hybrid NOMA / AirFL uplink
//! simulator: scenario configuration, deterministic runs with CSV records,
//! figure data bundles, and machine-checkable verification suites.

pub mod config;
pub mod figures;
pub mod runner;
pub mod verify;

pub use config::Scenario;
pub use runner::{run_one, run_scenario, RunOutcome};
