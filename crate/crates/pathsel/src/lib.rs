//! File formats, plots and the command-line driver around `pathsel-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod history;
pub mod plot;

pub use error::{Error, Result};
