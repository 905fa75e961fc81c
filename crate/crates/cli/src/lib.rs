//! Command implementations behind the `cogesture` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod svg;

pub use commands::*;
pub use config::{Preset, RunConfig};
