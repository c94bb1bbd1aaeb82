//! IO, file formats and experiment orchestration around `sslkd-core`:
//! TOML experiment configs, PNG dataset directories, binary checkpoints
//! with content hashes, run manifests, comparison reports and the staged
//! pipeline runner.

pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod manifest;
pub mod report;
pub mod runlog;
pub mod runner;

pub use error::{AppError, AppResult};
