//! Experiment harness: line-oriented config files, state persistence with
//! bit-exact round trips, and the run dispatcher that writes profiles,
//! diagnostics and a checksummed run manifest.

mod config;
mod persist;
mod run;

pub use config::{parse_config, ExperimentConfig, ScalingSection, StabilitySection, SteadySection};
pub use persist::{load_grid_density, load_state, store_grid_density, store_state};
pub use run::{run_experiment, AssertionRecord, RunManifest, RunOptions, Verb};
