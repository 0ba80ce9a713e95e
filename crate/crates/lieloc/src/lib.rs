//! Leader/follower cooperative localization simulator.
//!
//! Scenario files ([`config`]), ground truth ([`trajectory`]), sensor
//! synthesis ([`sensors`]), the per-robot filter pipelines ([`runner`]),
//! error statistics ([`metrics`]), result files ([`output`]) and the
//! command line ([`cli`]).

pub mod cli;
pub mod config;
pub mod error;
pub mod metrics;
pub mod output;
pub mod runner;
pub mod sensors;
pub mod trajectory;

pub use config::Scenario;
pub use error::{SimError, SimResult};
pub use runner::{run_scenario, run_scenario_seeded, FilterVariant, SimLog};
