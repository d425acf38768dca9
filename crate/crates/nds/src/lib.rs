//! Experiment tooling around `nds-core`: trajectory stores, model
//! artifacts, TOML configuration, run manifests, parallel execution and the
//! `nds` command-line subcommands.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod manifest;
pub mod store;

pub use error::{Error, Result};
pub use nds_core as core;
