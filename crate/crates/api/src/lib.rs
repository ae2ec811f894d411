//! Configuration, wire types, CSV rows and the VM2D model container shared
//! by the solver service, its client and the CLI.

pub mod config;
pub mod dto;
pub mod report;
pub mod vm2d;

pub use config::{ConfigError, RunConfig};
