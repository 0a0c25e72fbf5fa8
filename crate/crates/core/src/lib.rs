// SPDX-License-Identifier: Apache-2.0

//! Compiles fully-connected networks into bit-accurate fixed-point
//! dataflow implementations.
//!
//! A model is a [`model_ir::ModelGraph`] of typed layers, each carrying its
//! own [`fixed_point::FixedSpec`] formats. [`passes`] rewrite the graph,
//! [`kernels`] emulate it bit for bit, [`trainer`] and [`pruning`] produce
//! quantized and sparse weights, [`estimator`] and [`profiler`] report cost
//! and range coverage, and [`codegen`] emits a C++ project whose outputs
//! match the emulator exactly.

pub mod cli;
pub mod codegen;
pub mod config;
pub mod estimator;
pub mod fixed_point;
pub mod kernels;
pub mod model_ir;
pub mod passes;
pub mod profiler;
pub mod pruning;
pub mod scan;
pub mod trainer;
