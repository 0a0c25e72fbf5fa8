// SPDX-License-Identifier: Apache-2.0

//! Bit-accurate execution of a compiled network, plus a binary64 reference
//! forward pass.

mod inference;
mod matvec;

use thiserror::Error;

use crate::model_ir::ModelError;

pub use inference::{
    forward_real, run_inference, CompiledLayer, CompiledModel, Inference, LayerTap, TapValues,
};
pub(crate) use inference::{apply, compile_layer};
pub use matvec::{compress_coo, dense_mv, sparse_mv_coo, CooEntry, CooWeights, DenseWeights};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("{what}: expected {expected}, found {found}")]
    Shape {
        what: String,
        expected: String,
        found: String,
    },
    #[error("duplicate COO index {0}")]
    DuplicateIndex(u64),
    #[error("COO index {0} outside the matrix")]
    IndexOutOfRange(u64),
    #[error("layer `{layer}`: {reason}")]
    Unsupported { layer: String, reason: String },
    #[error("layer `{layer}` channel {channel}: variance + epsilon must be positive")]
    NonPositiveVariance { layer: String, channel: usize },
    #[error("raw input {raw} does not fit the input format {spec}")]
    RawInput { raw: i64, spec: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Binary tanh: `+1` when `x >= 0`.
pub fn binary_sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Ternary tanh: `+1` above 0.5, `-1` at or below -0.5, `0` between.
pub fn ternary_sign(x: f64) -> f64 {
    if x > 0.5 {
        1.0
    } else if x <= -0.5 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
