//! File formats, configuration, run manifests and the parallel ensemble
//! stage on top of `sysrisk-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod ingest;
pub mod manifest;
pub mod parallel;

pub use commands::{execute, produce, rerun, Artifacts, Executed, Replay};
pub use config::Job;
pub use error::{CliError, CliResult};
pub use ingest::{ingest, EquitySource, Snapshot};
pub use manifest::RunManifest;
