//! Experiment runner: JSON configuration, staged pipeline with CSV and JSON
//! outputs, a checksummed run manifest, and the acceptance suite.

pub mod config;
pub mod manifest;
pub mod run;
pub mod verify;

pub use config::{ExperimentConfig, Stage};
pub use manifest::RunManifest;
pub use run::{run, RunOptions};
