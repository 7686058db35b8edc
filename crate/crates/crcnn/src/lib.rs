//! Files, dataset layouts and the `crcnn` command line on top of
//! `crcnn-core`.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod scene;

pub use error::{CliError, Result};
