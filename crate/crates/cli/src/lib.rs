//! Configuration-driven experiments for the localized space-time multiscale
//! solver.

pub mod config;
pub mod error;
pub mod experiments;
pub mod table;

pub use config::Config;
pub use error::CliError;
