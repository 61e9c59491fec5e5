//! Configuration, dataset I/O and experiment drivers for `rvae`.

pub mod config;
pub mod connectome;
pub mod error;
pub mod experiments;
pub mod io;

pub use config::{parse_manifold, ExperimentConfig, ExperimentKind};
pub use error::{HarnessError, Result};
pub use experiments::{run, RunOutput};
