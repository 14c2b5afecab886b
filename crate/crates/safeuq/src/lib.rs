//! File formats, experiment runners and the `safeuq` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod manifest;

pub use error::{AppError, Result};
