//! Core of the borehole image gap-filling pipeline: a small reverse-mode
//! autodiff tensor library, the inpainting generator and its global/local
//! Wasserstein critics, adversarial training, and the linear-interpolation
//! baseline.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature. Everything that touches files, clocks or the command line lives
//! in the `bhgan` companion crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_op_in_unsafe_fn)]

extern crate alloc;

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod eval;
mod kernels;
pub mod net;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod texture;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use dataset::{ImageGray, Mask, MaskConfig, Sample, IMAGE_SIZE};
pub use error::{Error, Result};
pub use net::{CropBox, NetConfig, NetParams};
pub use optim::{OptimizerState, ParamTable};
pub use tensor::{Element, Tensor};
pub use train::{ModelParams, TrainConfig};
