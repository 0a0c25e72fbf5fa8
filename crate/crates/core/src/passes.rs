// SPDX-License-Identifier: Apache-2.0

//! Graph rewrites applied before quantized deployment.
//!
//! Fusion passes work on the real-valued parameters; they are meant to run
//! before weights are materialized in fixed point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed_point::Exact;
use crate::kernels::{self, KernelError};
use crate::model_ir::{LayerKind, LayerNode, ModelGraph, Tensor};

#[derive(Debug, Error)]
pub enum PassError {
    #[error("batch norm `{layer}` channel {channel}: variance + epsilon must be positive")]
    NonPositiveVariance { layer: String, channel: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rewrite {
    pub removed: Vec<String>,
    pub absorbed_into: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassReport {
    pub pass_name: String,
    pub rewrites: Vec<Rewrite>,
}

impl PassReport {
    fn new(name: &str) -> Self {
        Self {
            pass_name: name.to_string(),
            rewrites: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rewrites.is_empty()
    }
}

/// Removes `name`, pointing its successors at `replacement`.
fn splice_out(graph: &mut ModelGraph, name: &str, replacement: &str) {
    graph.nodes.retain(|n| n.name != name);
    for n in &mut graph.nodes {
        for input in &mut n.inputs {
            if input == name {
                *input = replacement.to_string();
            }
        }
    }
}

/// Finds `first -> second` where `second` is the only consumer of `first`
/// and `first` is the only input of `second`.
fn find_pair(graph: &ModelGraph, first: LayerKind, second: LayerKind) -> Option<(usize, usize)> {
    graph.nodes.iter().enumerate().find_map(|(i, n)| {
        if n.kind != first {
            return None;
        }
        let s = graph.single_successor(&n.name)?;
        let succ = &graph.nodes[s];
        (succ.kind == second && succ.inputs.len() == 1).then_some((i, s))
    })
}

struct BatchNormParams {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    mean: Vec<f64>,
    sd: Vec<f64>,
}

fn batch_norm_params(node: &LayerNode) -> Result<BatchNormParams, PassError> {
    let get = |k: &str| node.param(k).map(|t| t.data().to_vec()).unwrap_or_default();
    let var = get("moving_variance");
    let eps = get("epsilon").first().copied().unwrap_or(0.0);
    let sd = var
        .iter()
        .enumerate()
        .map(|(c, v)| {
            let d = v + eps;
            if d > 0.0 {
                Ok(d.sqrt())
            } else {
                Err(PassError::NonPositiveVariance {
                    layer: node.name.clone(),
                    channel: c,
                })
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(BatchNormParams {
        gamma: get("gamma"),
        beta: get("beta"),
        mean: get("moving_mean"),
        sd,
    })
}

/// Folds `dense -> batch_norm` into the dense layer:
/// `W'[i][j] = s_i W[i][j]`, `b'_i = s_i (b_i - mean_i) + beta_i` with
/// `s_i = gamma_i / sqrt(var_i + eps)`.
pub fn fuse_batchnorm_into_dense(graph: &ModelGraph) -> Result<(ModelGraph, PassReport), PassError> {
    let mut g = graph.clone();
    let mut report = PassReport::new("fuse_batchnorm_into_dense");
    while let Some((d, b)) = find_pair(&g, LayerKind::Dense, LayerKind::BatchNorm) {
        let bn = g.nodes[b].clone();
        let p = batch_norm_params(&bn)?;
        let dense = &mut g.nodes[d];
        let (n_out, n_in) = dense.param("weight").and_then(Tensor::dims2).expect("dense weight");
        let mut w = dense.params["weight"].data().to_vec();
        let mut bias = dense.params["bias"].data().to_vec();
        for i in 0..n_out {
            let s = p.gamma[i] / p.sd[i];
            for v in &mut w[i * n_in..(i + 1) * n_in] {
                *v *= s;
            }
            bias[i] = s * (bias[i] - p.mean[i]) + p.beta[i];
        }
        dense.params.insert("weight".into(), Tensor::matrix(n_out, n_in, w));
        dense.params.insert("bias".into(), Tensor::vector(bias));
        dense.precision.result = bn.precision.result;
        let absorbed = dense.name.clone();
        splice_out(&mut g, &bn.name, &absorbed);
        report.rewrites.push(Rewrite {
            removed: vec![bn.name],
            absorbed_into: absorbed,
        });
    }
    Ok((g, report))
}

/// Replaces `batch_norm -> binary_tanh` with a per-channel threshold node.
///
/// The sign of `gamma_i (x - mean_i) / sd_i + beta_i` flips at
/// `t_i = mean_i - beta_i sd_i / gamma_i`; for `gamma_i < 0` the comparison
/// direction reverses. A channel with `gamma_i == 0` always outputs
/// `sign(beta_i)` (with `sign(0) = +1`).
pub fn fuse_batchnorm_into_binary_tanh(
    graph: &ModelGraph,
) -> Result<(ModelGraph, PassReport), PassError> {
    let mut g = graph.clone();
    let mut report = PassReport::new("fuse_batchnorm_into_binary_tanh");
    while let Some((b, t)) = find_pair(&g, LayerKind::BatchNorm, LayerKind::BinaryTanh) {
        let bn = g.nodes[b].clone();
        let p = batch_norm_params(&bn)?;
        let mut thresholds = Vec::with_capacity(p.gamma.len());
        let mut directions = Vec::with_capacity(p.gamma.len());
        for c in 0..p.gamma.len() {
            if p.gamma[c] == 0.0 {
                log::warn!("`{}` channel {c}: gamma is zero, output is constant", bn.name);
                thresholds.push(if p.beta[c] >= 0.0 { 1.0 } else { -1.0 });
                directions.push(0.0);
            } else {
                thresholds.push(p.mean[c] - p.beta[c] * p.sd[c] / p.gamma[c]);
                directions.push(if p.gamma[c] > 0.0 { 1.0 } else { -1.0 });
            }
        }
        let tanh = &mut g.nodes[t];
        tanh.kind = LayerKind::Threshold;
        tanh.params.clear();
        tanh.params.insert("threshold".into(), Tensor::vector(thresholds));
        tanh.params.insert("direction".into(), Tensor::vector(directions));
        tanh.inputs = bn.inputs.clone();
        let absorbed = tanh.name.clone();
        g.nodes.retain(|n| n.name != bn.name);
        report.rewrites.push(Rewrite {
            removed: vec![bn.name],
            absorbed_into: absorbed,
        });
    }
    Ok((g, report))
}

/// Evaluates every layer fed only by a constant and replaces the pair with
/// a constant holding the fixed-point result. Softmax is left alone since
/// its output is not a fixed-point tensor.
pub fn constant_fold(graph: &ModelGraph) -> Result<(ModelGraph, PassReport), PassError> {
    let mut g = graph.clone();
    let mut report = PassReport::new("constant_fold");
    loop {
        let candidate = g.nodes.iter().enumerate().find_map(|(i, n)| {
            if n.kind != LayerKind::Constant {
                return None;
            }
            let s = g.single_successor(&n.name)?;
            let kind = g.nodes[s].kind;
            (kind != LayerKind::Softmax && kind != LayerKind::Constant).then_some((i, s))
        });
        let Some((c, s)) = candidate else { break };

        let constant = kernels::compile_layer(&g.nodes[c])?;
        let consumer = kernels::compile_layer(&g.nodes[s])?;
        let kernels::CompiledLayer::Constant(input) = constant else {
            unreachable!("constant node compiles to a constant layer")
        };
        let out = kernels::apply(&consumer, &input)?;
        // Store only values a double holds exactly, so re-quantizing the
        // constant reproduces the same raws.
        let exact = out
            .iter()
            .all(|v| Exact::from_f64(v.to_f64()).is_some_and(|e| same_value(e, v.exact())));
        if !exact {
            log::debug!("skipping fold of `{}`: result not exact in binary64", g.nodes[s].name);
            break;
        }
        let values: Vec<f64> = out.iter().map(|v| v.to_f64()).collect();
        let removed = g.nodes[c].name.clone();
        let node = &mut g.nodes[s];
        let result = node.precision.result;
        let mut folded = LayerNode::new(node.name.clone(), LayerKind::Constant)
            .with_param("value", Tensor::vector(values));
        folded.precision.result = result;
        folded.inputs = g.nodes[c].inputs.clone();
        let absorbed = folded.name.clone();
        g.nodes[s] = folded;
        g.nodes.remove(c);
        report.rewrites.push(Rewrite {
            removed: vec![removed],
            absorbed_into: absorbed,
        });
    }
    Ok((g, report))
}

fn same_value(a: Exact, b: Exact) -> bool {
    a.cmp(&b) == std::cmp::Ordering::Equal
}

/// Standard pipeline: threshold fusion, dense fusion, constant folding.
pub fn optimize(graph: &ModelGraph) -> Result<(ModelGraph, Vec<PassReport>), PassError> {
    let (g, r1) = fuse_batchnorm_into_binary_tanh(graph)?;
    let (g, r2) = fuse_batchnorm_into_dense(&g)?;
    let (g, r3) = constant_fold(&g)?;
    Ok((g, vec![r1, r2, r3]))
}
