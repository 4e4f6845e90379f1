//! Chip-wise defect segmentation of wafer photoluminescence maps with a fully
//! convolutional network.
//!
//! This crate is `no_std` + `alloc`; the `std` feature (on by default) only switches
//! the math and GEMM backends to their `std` builds. File formats and the command
//! line live in the companion `chipseg` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autograd;
pub mod error;
pub mod eval;
pub mod grid;
pub mod model;
pub mod ops;
pub mod params;
pub mod pipeline;
mod scalar;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod wafergen;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use grid::{Grid, Image, LabelMap, NUM_CLASSES};
pub use model::{build_model, predict_classes, InitMode, Model, ModelConfig, Variant};
pub use ops::Mode;
pub use params::{ParamId, ParamKind, ParamStore};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
pub use wafergen::{generate_dataset, generate_wafer, WaferGenConfig, WaferSample};
