// SPDX-License-Identifier: Apache-2.0

use super::matvec::{compress_coo, dense_mv, sparse_mv_coo, CooWeights, DenseWeights};
use super::{binary_sign, softmax, ternary_sign, KernelError};
use crate::fixed_point::{mul, quantize, Accumulator, Exact, Fixed, FixedSpec};
use crate::model_ir::{validate, LayerKind, LayerNode, ModelError, ModelGraph, PrecisionSet};

/// One layer with its parameters materialized in fixed point.
#[derive(Debug, Clone)]
pub enum CompiledLayer {
    Dense {
        weights: DenseWeights,
        coo: Option<CooWeights>,
        bias: Vec<Fixed>,
        precision: PrecisionSet,
    },
    /// Batch norm as a per-channel `scale * x + shift`.
    Scale {
        scale: Vec<Fixed>,
        shift: Vec<Fixed>,
        precision: PrecisionSet,
    },
    Relu(FixedSpec),
    BinaryTanh(FixedSpec),
    TernaryTanh(FixedSpec),
    Threshold {
        thresholds: Vec<Exact>,
        directions: Vec<i8>,
        result: FixedSpec,
    },
    Constant(Vec<Fixed>),
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TapValues {
    Fixed(Vec<Fixed>),
    Real(Vec<f64>),
}

impl TapValues {
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TapValues::Fixed(v) => v.iter().map(Fixed::to_f64).collect(),
            TapValues::Real(v) => v.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TapValues::Fixed(v) => v.len(),
            TapValues::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Output of one hidden or output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTap {
    pub layer: String,
    pub values: TapValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// Final output as reals (probabilities when the model ends in softmax).
    pub output: Vec<f64>,
    /// Last fixed-point tensor produced (the logits before a softmax).
    pub fixed_output: Vec<Fixed>,
    pub taps: Vec<LayerTap>,
}

#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub input_spec: FixedSpec,
    pub input_width: usize,
    pub layers: Vec<(String, CompiledLayer)>,
}

impl CompiledModel {
    pub fn compile(graph: &ModelGraph) -> Result<Self, KernelError> {
        let diags = validate(graph);
        if !diags.is_empty() {
            return Err(ModelError::Validation(diags).into());
        }
        let order = graph.ordered_nodes()?;
        let input = order[0];
        let mut layers = Vec::with_capacity(order.len() - 1);
        for (pos, node) in order.iter().enumerate().skip(1) {
            if node.kind == LayerKind::Softmax && pos + 1 != order.len() {
                return Err(KernelError::Unsupported {
                    layer: node.name.clone(),
                    reason: "softmax is only supported as the final layer".into(),
                });
            }
            layers.push((node.name.clone(), compile_layer(node)?));
        }
        Ok(Self {
            input_spec: input.precision.result,
            input_width: graph.input_width(),
            layers,
        })
    }

    pub fn run(&self, input: &[f64], tap_all: bool) -> Result<Inference, KernelError> {
        let x: Vec<Fixed> = input.iter().map(|&v| quantize(v, self.input_spec)).collect();
        self.run_fixed(x, tap_all)
    }

    /// Input given as raw integers in the input format.
    pub fn run_raw(&self, raw: &[i64], tap_all: bool) -> Result<Inference, KernelError> {
        let x = raw
            .iter()
            .map(|&r| {
                Fixed::from_raw(r, self.input_spec).map_err(|_| KernelError::RawInput {
                    raw: r,
                    spec: self.input_spec.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.run_fixed(x, tap_all)
    }

    fn run_fixed(&self, x: Vec<Fixed>, tap_all: bool) -> Result<Inference, KernelError> {
        if x.len() != self.input_width {
            return Err(KernelError::Shape {
                what: "model input".into(),
                expected: self.input_width.to_string(),
                found: x.len().to_string(),
            });
        }
        let mut current = x;
        let mut probabilities = None;
        let mut taps = Vec::new();
        for (name, layer) in &self.layers {
            if let CompiledLayer::Softmax = layer {
                let p = softmax(&current.iter().map(Fixed::to_f64).collect::<Vec<_>>());
                if tap_all {
                    taps.push(LayerTap {
                        layer: name.clone(),
                        values: TapValues::Real(p.clone()),
                    });
                }
                probabilities = Some(p);
                continue;
            }
            current = apply(layer, &current)?;
            if tap_all {
                taps.push(LayerTap {
                    layer: name.clone(),
                    values: TapValues::Fixed(current.clone()),
                });
            }
        }
        let output = probabilities.unwrap_or_else(|| current.iter().map(Fixed::to_f64).collect());
        Ok(Inference {
            output,
            fixed_output: current,
            taps,
        })
    }
}

fn quantize_all(values: &[f64], spec: FixedSpec) -> Vec<Fixed> {
    values.iter().map(|&v| quantize(v, spec)).collect()
}

fn param<'a>(node: &'a LayerNode, key: &str) -> &'a [f64] {
    node.param(key)
        .unwrap_or_else(|| panic!("validated layer `{}` lacks `{key}`", node.name))
        .data()
}

/// `(scale, shift)` so that batch norm equals `scale * x + shift`.
fn batch_norm_affine(node: &LayerNode) -> Result<(Vec<f64>, Vec<f64>), KernelError> {
    let gamma = param(node, "gamma");
    let beta = param(node, "beta");
    let mean = param(node, "moving_mean");
    let var = param(node, "moving_variance");
    let eps = param(node, "epsilon")[0];
    let mut scale = Vec::with_capacity(gamma.len());
    let mut shift = Vec::with_capacity(gamma.len());
    for c in 0..gamma.len() {
        let denom = var[c] + eps;
        if denom <= 0.0 {
            return Err(KernelError::NonPositiveVariance {
                layer: node.name.clone(),
                channel: c,
            });
        }
        let s = gamma[c] / denom.sqrt();
        scale.push(s);
        shift.push(beta[c] - mean[c] * s);
    }
    Ok((scale, shift))
}

pub(crate) fn compile_layer(node: &LayerNode) -> Result<CompiledLayer, KernelError> {
    let p = node.precision;
    Ok(match node.kind {
        LayerKind::Dense => {
            let weights = DenseWeights::quantize(node.param("weight").unwrap(), p.weight)?;
            let coo = node.compression.then(|| compress_coo(&weights));
            CompiledLayer::Dense {
                bias: quantize_all(param(node, "bias"), p.bias),
                weights,
                coo,
                precision: p,
            }
        }
        LayerKind::BatchNorm => {
            let (scale, shift) = batch_norm_affine(node)?;
            CompiledLayer::Scale {
                scale: quantize_all(&scale, p.weight),
                shift: quantize_all(&shift, p.bias),
                precision: p,
            }
        }
        LayerKind::Relu => CompiledLayer::Relu(p.result),
        LayerKind::BinaryTanh => CompiledLayer::BinaryTanh(p.result),
        LayerKind::TernaryTanh => CompiledLayer::TernaryTanh(p.result),
        LayerKind::Threshold => CompiledLayer::Threshold {
            thresholds: param(node, "threshold")
                .iter()
                .map(|&t| Exact::from_f64(t).expect("finite threshold"))
                .collect(),
            directions: param(node, "direction").iter().map(|&d| d as i8).collect(),
            result: p.result,
        },
        LayerKind::Constant => CompiledLayer::Constant(quantize_all(param(node, "value"), p.result)),
        LayerKind::Softmax => CompiledLayer::Softmax,
        LayerKind::Input => {
            return Err(KernelError::Unsupported {
                layer: node.name.clone(),
                reason: "input node inside the chain".into(),
            })
        }
    })
}

pub(crate) fn apply(layer: &CompiledLayer, x: &[Fixed]) -> Result<Vec<Fixed>, KernelError> {
    let unit = |v: f64, spec: FixedSpec| quantize(v, spec);
    Ok(match layer {
        CompiledLayer::Dense {
            weights,
            coo,
            bias,
            precision,
        } => match coo {
            Some(coo) => sparse_mv_coo(coo, bias, x, precision)?,
            None => dense_mv(weights, bias, x, precision)?,
        },
        CompiledLayer::Scale {
            scale,
            shift,
            precision,
        } => {
            if x.len() != scale.len() {
                return Err(KernelError::Shape {
                    what: "batch norm input".into(),
                    expected: scale.len().to_string(),
                    found: x.len().to_string(),
                });
            }
            x.iter()
                .zip(scale.iter().zip(shift))
                .map(|(&xi, (&s, &b))| {
                    let mut acc = Accumulator::starting_at(b, precision.accumulator);
                    acc.add_product(&mul(s, xi));
                    acc.finish(precision.result)
                })
                .collect()
        }
        CompiledLayer::Relu(spec) => x
            .iter()
            .map(|v| {
                if v.raw() > 0 {
                    crate::fixed_point::cast(*v, *spec)
                } else {
                    Fixed::zero(*spec)
                }
            })
            .collect(),
        CompiledLayer::BinaryTanh(spec) => x
            .iter()
            .map(|v| unit(if v.raw() >= 0 { 1.0 } else { -1.0 }, *spec))
            .collect(),
        CompiledLayer::TernaryTanh(spec) => {
            let half = Exact::new(1, 1);
            let neg_half = Exact::new(-1, 1);
            x.iter()
                .map(|v| {
                    let e = v.exact();
                    let t = if e > half {
                        1.0
                    } else if e <= neg_half {
                        -1.0
                    } else {
                        0.0
                    };
                    unit(t, *spec)
                })
                .collect()
        }
        CompiledLayer::Threshold {
            thresholds,
            directions,
            result,
        } => {
            if x.len() != thresholds.len() {
                return Err(KernelError::Shape {
                    what: "threshold input".into(),
                    expected: thresholds.len().to_string(),
                    found: x.len().to_string(),
                });
            }
            x.iter()
                .zip(thresholds.iter().zip(directions))
                .map(|(v, (t, d))| unit(threshold_sign(v.exact(), *t, *d, t.mant >= 0), *result))
                .collect()
        }
        CompiledLayer::Constant(values) => values.clone(),
        CompiledLayer::Softmax => unreachable!("softmax handled by the caller"),
    })
}

/// `direction` 1: `+1` iff `x >= t`; -1: `+1` iff `x <= t`; 0: constant
/// channel whose output is the sign of `t` (stored as exactly +1 or -1).
fn threshold_sign<T: PartialOrd + Copy>(x: T, t: T, direction: i8, t_nonneg: bool) -> f64 {
    let up = match direction {
        1 => x >= t,
        -1 => x <= t,
        _ => t_nonneg,
    };
    if up {
        1.0
    } else {
        -1.0
    }
}

/// Executes the compiled form of `graph` on one real-valued input.
pub fn run_inference(graph: &ModelGraph, input: &[f64], tap_all: bool) -> Result<Inference, KernelError> {
    CompiledModel::compile(graph)?.run(input, tap_all)
}

/// Real-arithmetic (binary64) forward pass of `graph`.
pub fn forward_real(graph: &ModelGraph, input: &[f64]) -> Result<Vec<f64>, KernelError> {
    let order = graph.ordered_nodes()?;
    if input.len() != graph.input_width() {
        return Err(KernelError::Shape {
            what: "model input".into(),
            expected: graph.input_width().to_string(),
            found: input.len().to_string(),
        });
    }
    let mut x = input.to_vec();
    for node in order.into_iter().skip(1) {
        x = match node.kind {
            LayerKind::Dense => {
                let w = node.param("weight").unwrap();
                let (n_out, n_in) = w.dims2().unwrap();
                if x.len() != n_in {
                    return Err(KernelError::Shape {
                        what: format!("`{}` input", node.name),
                        expected: n_in.to_string(),
                        found: x.len().to_string(),
                    });
                }
                let b = param(node, "bias");
                (0..n_out)
                    .map(|i| {
                        let row = &w.data()[i * n_in..(i + 1) * n_in];
                        b[i] + row.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>()
                    })
                    .collect()
            }
            LayerKind::BatchNorm => {
                let gamma = param(node, "gamma");
                let beta = param(node, "beta");
                let mean = param(node, "moving_mean");
                let var = param(node, "moving_variance");
                let eps = param(node, "epsilon")[0];
                x.iter()
                    .enumerate()
                    .map(|(c, v)| gamma[c] * (v - mean[c]) / (var[c] + eps).sqrt() + beta[c])
                    .collect()
            }
            LayerKind::Relu => x.iter().map(|v| v.max(0.0)).collect(),
            LayerKind::BinaryTanh => x.iter().map(|&v| binary_sign(v)).collect(),
            LayerKind::TernaryTanh => x.iter().map(|&v| ternary_sign(v)).collect(),
            LayerKind::Threshold => {
                let t = param(node, "threshold");
                let d = param(node, "direction");
                x.iter()
                    .enumerate()
                    .map(|(c, &v)| threshold_real(v, t[c], d[c] as i8))
                    .collect()
            }
            LayerKind::Constant => param(node, "value").to_vec(),
            LayerKind::Softmax => softmax(&x),
            LayerKind::Input => {
                return Err(KernelError::Unsupported {
                    layer: node.name.clone(),
                    reason: "input node inside the chain".into(),
                })
            }
        };
    }
    Ok(x)
}

fn threshold_real(x: f64, t: f64, direction: i8) -> f64 {
    threshold_sign(x, t, direction, t >= 0.0)
}
