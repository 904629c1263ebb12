//! File formats, checkpoints and the command-line driver for GAN-based
//! gap filling of borehole images. The numerical core lives in
//! `bhgan-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod grid;
pub mod image_io;
pub mod pgm;

pub use config::{Overrides, RunConfig};
pub use error::{Error, Result};
