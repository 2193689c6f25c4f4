pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod pgm;
pub mod svg;
pub mod table;

pub use error::{HarnessError, Result};
