//! Command-line front end for the particle MCMC toolkit: declarative run
//! configs, the five commands, and run manifests.

pub mod commands;
pub mod config;
pub mod models;

pub use commands::{execute, RunOptions, RunReport, MANIFEST};
pub use config::{CommandKind, RunConfig};
