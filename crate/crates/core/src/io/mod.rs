//! Run configuration, molecule files, on-disk formats and run manifests.

pub mod cache;
pub mod config;
pub mod formats;
pub mod manifest;
pub mod molecule;

pub use config::{Experiment, RunConfig};
pub use manifest::{OutputDir, RunManifest};
pub use molecule::{load_molecule, parse_molecule};
