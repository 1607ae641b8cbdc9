//! Files, command line and experiment grid around `resonance-core`.
//!
//! - [`config`]: the JSON experiment config and its built-in profiles.
//! - [`dataset`], [`checkpoint`], [`metrics`], [`schedule_doc`]: on-disk formats.
//! - [`repro`]: resumable grid of isolated training runs.
//! - [`report`]: mean / population-std tables from finished runs.
//! - [`analyze`]: schedule analysis behind the `analyze` subcommand.

pub mod analyze;
pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod repro;
pub mod report;
pub mod schedule_doc;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
