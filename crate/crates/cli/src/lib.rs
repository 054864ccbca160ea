//! Scenario runner for the swarm ledger simulator: config loading, seeded
//! runs, metrics and run artifacts.

pub mod config;
pub mod metrics;
pub mod report;
pub mod runner;

pub use config::{load_config, parse_config, ConfigError, RunConfig};
pub use metrics::RunMetrics;
pub use runner::{compute_metrics, exit_code, run, simulate, RunError, Simulation};
