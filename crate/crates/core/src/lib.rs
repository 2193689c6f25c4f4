pub mod attacks;
pub mod data;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod vae;

pub use error::{Error, Result};
