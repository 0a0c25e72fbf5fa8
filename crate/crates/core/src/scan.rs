// SPDX-License-Identifier: Apache-2.0

//! Bit-width sweep comparing post-training quantization with
//! quantization-aware training.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::fixed_point::FixedSpec;
use crate::model_ir::ModelGraph;
use crate::trainer::{
    evaluate, train, train_qat, Arithmetic, Dataset, QuantizerSpec, TrainError, TrainingConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Total weight widths to sweep.
    pub bits: Vec<u32>,
    /// Float and QAT runs share these hyperparameters.
    pub training: TrainingConfig,
    /// Input, accumulator and result format of every layer.
    pub input_spec: FixedSpec,
    pub accumulator_spec: FixedSpec,
    pub result_spec: FixedSpec,
    /// Start quantization-aware training from the trained float weights
    /// instead of the initial ones.
    #[serde(default)]
    pub qat_from_float: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        let wide = FixedSpec::new(32, 16).expect("valid spec");
        Self {
            bits: (3..=16).collect(),
            training: TrainingConfig::default(),
            input_spec: FixedSpec::new(16, 6).expect("valid spec"),
            accumulator_spec: wide,
            result_spec: wide,
            qat_from_float: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub bits: u32,
    pub ptq_accuracy: f64,
    pub qat_accuracy: f64,
    pub ptq_relative: f64,
    pub qat_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub float_accuracy: f64,
    pub points: Vec<ScanPoint>,
}

impl ScanResult {
    pub fn point(&self, bits: u32) -> Option<&ScanPoint> {
        self.points.iter().find(|p| p.bits == bits)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bits,ptq_rel_acc,qat_rel_acc\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.bits, p.ptq_relative, p.qat_relative);
        }
        s
    }
}

/// Integer bits of a signed format whose range covers `max_abs`.
pub fn integer_bits_for(max_abs: f64) -> i32 {
    if max_abs <= 0.0 {
        1
    } else {
        max_abs.log2().floor() as i32 + 2
    }
}

/// Widest magnitude over a dense layer's weights and biases.
fn layer_max_abs(graph: &ModelGraph, layer: &str) -> f64 {
    let node = graph.node(layer).expect("dense layer present");
    ["weight", "bias"]
        .iter()
        .flat_map(|k| node.param(k).unwrap().data().iter())
        .fold(0.0, |m, v| m.max(v.abs()))
}

/// A `bits`-wide fixed quantizer per dense layer of `model`, with integer
/// bits sized to the layer's largest weight or bias.
pub fn profiled_quantizers(model: &ModelGraph, bits: u32) -> Result<BTreeMap<String, QuantizerSpec>, TrainError> {
    model
        .dense_layers()
        .map(|n| {
            let q = QuantizerSpec::fixed(bits, integer_bits_for(layer_max_abs(model, &n.name)));
            q.validate().map_err(TrainError::Config)?;
            Ok((n.name.clone(), q))
        })
        .collect()
}

/// Trains `init` in floating point, then for every width `w` evaluates
/// (a) the float model with weights and biases truncated into
/// `fixed<w, I>` and (b) a model trained with a
/// `fixed<w, I, rnd, sat>` quantizer (from the float weights when
/// `qat_from_float` is set). `I` is profiled per layer from the
/// float model. Both quantized models run on the bit-accurate emulator.
pub fn scan(init: &ModelGraph, train_data: &Dataset, test_data: &Dataset, cfg: &ScanConfig) -> Result<ScanResult, TrainError> {
    let float_model = train(init, train_data, &cfg.training)?.model;
    let float_accuracy = evaluate(&float_model, test_data, Arithmetic::Real)?.accuracy;
    let mut points = Vec::new();
    for &bits in &cfg.bits {
        let quantizers = profiled_quantizers(&float_model, bits)?;
        let mut ptq = float_model.with_datapath(cfg.input_spec, cfg.accumulator_spec, cfg.result_spec);
        for (name, q) in &quantizers {
            let spec = FixedSpec::new(bits, q.integer_bits).map_err(|e| TrainError::Config(e.to_string()))?;
            let node = ptq.node_mut(name).unwrap();
            node.precision.weight = spec;
            node.precision.bias = spec;
        }
        let qat_cfg = TrainingConfig { quantizers, ..cfg.training.clone() };
        let start = if cfg.qat_from_float { &float_model } else { init };
        let qat = train_qat(start, train_data, &qat_cfg)?
            .model
            .with_datapath(cfg.input_spec, cfg.accumulator_spec, cfg.result_spec);
        let ptq_accuracy = evaluate(&ptq, test_data, Arithmetic::Fixed)?.accuracy;
        let qat_accuracy = evaluate(&qat, test_data, Arithmetic::Fixed)?.accuracy;
        log::info!("bits {bits}: ptq {ptq_accuracy:.4} qat {qat_accuracy:.4} float {float_accuracy:.4}");
        points.push(ScanPoint {
            bits,
            ptq_accuracy,
            qat_accuracy,
            ptq_relative: ptq_accuracy / float_accuracy,
            qat_relative: qat_accuracy / float_accuracy,
        });
    }
    Ok(ScanResult { float_accuracy, points })
}
