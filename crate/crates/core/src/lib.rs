//! RGB-guided diffusion for RAW image reconstruction.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod raw;
pub mod sampling;
pub mod schedule;
pub mod training;
pub mod unet;

pub use error::{Error, Result};
