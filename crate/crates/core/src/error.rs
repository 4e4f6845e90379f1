use alloc::string::String;

use thiserror::Error;

use crate::tensor::Shape;

/// Errors raised by the tensor kernels, model assembly, data generation and training.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: Shape,
        actual: Shape,
    },

    #[error("channel mismatch in {op}: input has {actual} channels, kernel expects {expected}")]
    Channels {
        op: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input {height}x{width} is too small: need at least {min}x{min} for {pools} poolings")]
    InputTooSmall {
        height: usize,
        width: usize,
        min: usize,
        pools: usize,
    },

    #[error("weight import failed at layer `{layer}`: {reason}")]
    Import { layer: String, reason: String },

    #[error("defect placement failed: {0}")]
    Placement(String),

    #[error("rotation by {angle} degrees requires a square grid, got {height}x{width}")]
    NonSquare {
        angle: u32,
        height: usize,
        width: usize,
    },

    #[error("invalid rotation angle {0}; only multiples of 90 are supported")]
    Angle(u32),

    #[error("label value {value} at pixel {index} is not a class in 0..{classes}")]
    LabelRange {
        value: u8,
        index: usize,
        classes: usize,
    },

    #[error("confusion matrix is empty")]
    EmptyConfusion,

    #[error("stratification unsatisfiable: {0}")]
    Stratification(String),

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("{0}")]
    Other(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
