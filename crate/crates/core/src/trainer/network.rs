// SPDX-License-Identifier: Apache-2.0

//! Flat-parameter view of a dense/relu/batch-norm/softmax chain with a
//! batched forward pass and hand-written backward pass.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Masks, QuantMode, QuantizerSpec, TrainError};
use crate::fixed_point::FixedSpec;
use crate::model_ir::{validate, LayerKind, LayerNode, ModelError, ModelGraph, Tensor};

#[derive(Debug, Clone)]
enum Op {
    Dense {
        node: usize,
        n_in: usize,
        n_out: usize,
        w: usize,
        b: usize,
        quant: Option<QuantizerSpec>,
        mask: Option<Vec<bool>>,
    },
    Relu,
    BatchNorm {
        node: usize,
        n: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Softmax,
}

#[derive(Debug)]
enum OpCache {
    None,
    Dense { w_eff: Vec<f64> },
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, mean: Vec<f64>, var: Vec<f64> },
}

/// Intermediate values of one forward pass, consumed by
/// [`Network::backward`].
#[derive(Debug)]
pub struct ForwardCache {
    batch: usize,
    inputs: Vec<Vec<f64>>,
    ops: Vec<OpCache>,
}

/// Trainable parameters of a model graph laid out in one vector.
///
/// Dense layers contribute `weight` (row-major `[out x in]`) then `bias`;
/// batch-norm layers contribute `gamma` then `beta`.
#[derive(Debug, Clone)]
pub struct Network {
    template: ModelGraph,
    ops: Vec<Op>,
    params: Vec<f64>,
    input_width: usize,
    output_width: usize,
}

fn unsupported(node: &LayerNode) -> TrainError {
    TrainError::Unsupported {
        layer: node.name.clone(),
        kind: node.kind.as_str().to_string(),
    }
}

impl Network {
    pub fn from_graph(
        graph: &ModelGraph,
        quantizers: &BTreeMap<String, QuantizerSpec>,
        masks: Option<&Masks>,
    ) -> Result<Self, TrainError> {
        let diags = validate(graph);
        if !diags.is_empty() {
            return Err(ModelError::Validation(diags).into());
        }
        let order = graph.topo_order()?;
        let mut ops = Vec::new();
        let mut params = Vec::new();
        for (pos, &idx) in order.iter().enumerate().skip(1) {
            let node = &graph.nodes[idx];
            let op = match node.kind {
                LayerKind::Dense => {
                    let (n_in, n_out) = node.dense_dims().expect("validated dense");
                    let w = params.len();
                    params.extend_from_slice(node.param("weight").unwrap().data());
                    let b = params.len();
                    params.extend_from_slice(node.param("bias").unwrap().data());
                    let quant = quantizers.get(&node.name).copied();
                    if let Some(q) = quant {
                        q.validate().map_err(|m| TrainError::Config(format!("`{}`: {m}", node.name)))?;
                    }
                    let mask = match masks.and_then(|m| m.get(&node.name)) {
                        Some(m) if m.len() != n_in * n_out => {
                            return Err(TrainError::Config(format!(
                                "mask for `{}` has {} entries, expected {}",
                                node.name,
                                m.len(),
                                n_in * n_out
                            )))
                        }
                        Some(m) => Some(m.clone()),
                        None => None,
                    };
                    Op::Dense { node: idx, n_in, n_out, w, b, quant, mask }
                }
                LayerKind::Relu => Op::Relu,
                LayerKind::BatchNorm => {
                    let gamma_t = node.param("gamma").unwrap().data();
                    let n = gamma_t.len();
                    let gamma = params.len();
                    params.extend_from_slice(gamma_t);
                    let beta = params.len();
                    params.extend_from_slice(node.param("beta").unwrap().data());
                    Op::BatchNorm {
                        node: idx,
                        n,
                        gamma,
                        beta,
                        eps: node.param("epsilon").unwrap().data()[0],
                        mean: node.param("moving_mean").unwrap().data().to_vec(),
                        var: node.param("moving_variance").unwrap().data().to_vec(),
                    }
                }
                LayerKind::Softmax if pos + 1 == order.len() => Op::Softmax,
                _ => return Err(unsupported(node)),
            };
            ops.push(op);
        }
        if let Some(m) = masks {
            for name in m.keys() {
                match graph.node(name) {
                    Some(n) if n.kind == LayerKind::Dense => {}
                    _ => return Err(TrainError::Config(format!("mask for unknown dense layer `{name}`"))),
                }
            }
        }
        let mut net = Self {
            template: graph.clone(),
            ops,
            params,
            input_width: graph.input_width(),
            output_width: graph.output_width()?,
        };
        net.enforce_masks();
        Ok(net)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    /// Zeroes masked-out master weights.
    pub fn enforce_masks(&mut self) {
        for op in &self.ops {
            if let Op::Dense { w, mask: Some(mask), .. } = op {
                for (k, keep) in mask.iter().enumerate() {
                    if !keep {
                        self.params[w + k] = 0.0;
                    }
                }
            }
        }
    }

    /// Parameter ranges holding dense weights (L1 applies to these only).
    pub fn weight_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Dense { w, n_in, n_out, .. } => Some(*w..*w + n_in * n_out),
                _ => None,
            })
            .collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.weight_ranges()
            .into_iter()
            .flat_map(|r| self.params[r].iter())
            .map(|w| w.abs())
            .sum()
    }

    /// Forward pass over `batch` rows of `x`. Returns pre-softmax logits.
    /// `training` selects batch statistics for batch-norm layers.
    pub fn forward(&self, x: &[f64], batch: usize, training: bool) -> (Vec<f64>, ForwardCache) {
        assert_eq!(x.len(), batch * self.input_width, "input batch shape");
        let mut cur = x.to_vec();
        let mut inputs = Vec::with_capacity(self.ops.len());
        let mut caches = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let (next, cache) = match op {
                Op::Dense { n_in, n_out, w, b, quant, mask, .. } => {
                    let (n_in, n_out) = (*n_in, *n_out);
                    let mut w_eff = self.params[*w..*w + n_in * n_out].to_vec();
                    let mut b_eff = self.params[*b..*b + n_out].to_vec();
                    if let Some(q) = quant {
                        w_eff.iter_mut().for_each(|v| *v = q.apply(*v));
                        b_eff.iter_mut().for_each(|v| *v = q.apply(*v));
                    }
                    if let Some(mask) = mask {
                        for (v, keep) in w_eff.iter_mut().zip(mask) {
                            if !keep {
                                *v = 0.0;
                            }
                        }
                    }
                    let mut y = vec![0.0; batch * n_out];
                    for s in 0..batch {
                        let xs = &cur[s * n_in..(s + 1) * n_in];
                        for o in 0..n_out {
                            let row = &w_eff[o * n_in..(o + 1) * n_in];
                            let dot: f64 = row.iter().zip(xs).map(|(a, c)| a * c).sum();
                            y[s * n_out + o] = b_eff[o] + dot;
                        }
                    }
                    (y, OpCache::Dense { w_eff })
                }
                Op::Relu => (cur.iter().map(|v| v.max(0.0)).collect(), OpCache::None),
                Op::BatchNorm { n, gamma, beta, eps, mean, var, .. } => {
                    let n = *n;
                    let (mu, sigma2) = if training {
                        batch_moments(&cur, batch, n)
                    } else {
                        (mean.clone(), var.clone())
                    };
                    let inv_std: Vec<f64> = sigma2.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                    let mut xhat = vec![0.0; cur.len()];
                    let mut y = vec![0.0; cur.len()];
                    for s in 0..batch {
                        for c in 0..n {
                            let k = s * n + c;
                            xhat[k] = (cur[k] - mu[c]) * inv_std[c];
                            y[k] = self.params[gamma + c] * xhat[k] + self.params[beta + c];
                        }
                    }
                    (y, OpCache::BatchNorm { xhat, inv_std, mean: mu, var: sigma2 })
                }
                Op::Softmax => break,
            };
            inputs.push(std::mem::replace(&mut cur, next));
            caches.push(cache);
        }
        (cur, ForwardCache { batch, inputs, ops: caches })
    }

    /// Gradient of the loss with respect to every parameter given the
    /// gradient `dlogits` at the pre-softmax output. Dense weight gradients
    /// pass straight through quantizers, zeroed outside the quantizer range
    /// and at masked entries.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> Vec<f64> {
        let batch = cache.batch;
        let mut grad = vec![0.0; self.params.len()];
        let mut dy = dlogits.to_vec();
        for (k, op) in self.ops.iter().enumerate().take(cache.ops.len()).rev() {
            let x = &cache.inputs[k];
            dy = match (op, &cache.ops[k]) {
                (Op::Dense { n_in, n_out, w, b, quant, mask, .. }, OpCache::Dense { w_eff }) => {
                    let (n_in, n_out) = (*n_in, *n_out);
                    let mut dx = vec![0.0; batch * n_in];
                    for s in 0..batch {
                        let xs = &x[s * n_in..(s + 1) * n_in];
                        let dxs = &mut dx[s * n_in..(s + 1) * n_in];
                        for o in 0..n_out {
                            let g = dy[s * n_out + o];
                            if g == 0.0 {
                                continue;
                            }
                            grad[b + o] += g;
                            let row = &w_eff[o * n_in..(o + 1) * n_in];
                            let gw = &mut grad[w + o * n_in..w + (o + 1) * n_in];
                            for i in 0..n_in {
                                dxs[i] += g * row[i];
                                gw[i] += g * xs[i];
                            }
                        }
                    }
                    if let Some(q) = quant {
                        for j in (*w..*w + n_in * n_out).chain(*b..*b + n_out) {
                            if !q.passes_gradient(self.params[j]) {
                                grad[j] = 0.0;
                            }
                        }
                    }
                    if let Some(mask) = mask {
                        for (j, keep) in mask.iter().enumerate() {
                            if !keep {
                                grad[w + j] = 0.0;
                            }
                        }
                    }
                    dx
                }
                (Op::Relu, _) => dy.iter().zip(x).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect(),
                (Op::BatchNorm { n, gamma, beta, .. }, OpCache::BatchNorm { xhat, inv_std, .. }) => {
                    let n = *n;
                    let bf = batch as f64;
                    let mut dx = vec![0.0; dy.len()];
                    for c in 0..n {
                        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
                        for s in 0..batch {
                            sum_dy += dy[s * n + c];
                            sum_dy_xhat += dy[s * n + c] * xhat[s * n + c];
                        }
                        grad[gamma + c] += sum_dy_xhat;
                        grad[beta + c] += sum_dy;
                        let g = self.params[gamma + c];
                        for s in 0..batch {
                            let k = s * n + c;
                            dx[k] = g * inv_std[c] / bf * (bf * dy[k] - sum_dy - xhat[k] * sum_dy_xhat);
                        }
                    }
                    dx
                }
                _ => unreachable!("cache does not match layer"),
            };
        }
        grad
    }

    /// Moving-average update of batch-norm statistics from a training
    /// forward pass.
    pub fn update_running_stats(&mut self, cache: &ForwardCache, momentum: f64) {
        for (op, c) in self.ops.iter_mut().zip(&cache.ops) {
            if let (Op::BatchNorm { mean, var, .. }, OpCache::BatchNorm { mean: bm, var: bv, .. }) = (op, c) {
                for (m, b) in mean.iter_mut().zip(bm) {
                    *m = momentum * *m + (1.0 - momentum) * b;
                }
                for (v, b) in var.iter_mut().zip(bv) {
                    *v = momentum * *v + (1.0 - momentum) * b;
                }
            }
        }
    }

    /// Mean cross-entropy of softmax(logits) plus `l1 * sum|w|`, and its
    /// gradient with respect to the parameters.
    pub fn loss_and_gradient(
        &self,
        x: &[f64],
        labels: &[usize],
        l1: f64,
        training: bool,
    ) -> (f64, Vec<f64>) {
        let batch = labels.len();
        let (logits, cache) = self.forward(x, batch, training);
        let (ce, dlogits) = cross_entropy(&logits, labels, self.output_width);
        let mut grad = self.backward(&cache, &dlogits);
        if l1 != 0.0 {
            for r in self.weight_ranges() {
                for j in r {
                    grad[j] += l1 * sign(self.params[j]);
                }
            }
        }
        (ce + l1 * self.l1_norm(), grad)
    }

    /// Loss only, for finite differences and monitoring.
    pub fn loss(&self, x: &[f64], labels: &[usize], l1: f64, training: bool) -> f64 {
        let (logits, _) = self.forward(x, labels.len(), training);
        cross_entropy(&logits, labels, self.output_width).0 + l1 * self.l1_norm()
    }

    /// Writes parameters and statistics back into a copy of the source
    /// graph. Dense layers with a fixed quantizer at unit scale take the
    /// quantizer's format as their weight and bias precision, so the
    /// emulator reproduces the training forward pass; other quantizers are
    /// materialized as the quantized values.
    pub fn to_graph(&self) -> ModelGraph {
        let mut g = self.template.clone();
        for op in &self.ops {
            match op {
                Op::Dense { node, n_in, n_out, w, b, quant, mask } => {
                    let mut weight = self.params[*w..*w + n_in * n_out].to_vec();
                    let mut bias = self.params[*b..*b + n_out].to_vec();
                    let node = &mut g.nodes[*node];
                    match quant {
                        Some(q) if q.mode == QuantMode::Fixed && q.alpha == 1.0 => {
                            let spec: FixedSpec = q.fixed_spec().expect("validated quantizer");
                            node.precision.weight = spec;
                            node.precision.bias = spec;
                        }
                        Some(q) => {
                            weight.iter_mut().for_each(|v| *v = q.apply(*v));
                            bias.iter_mut().for_each(|v| *v = q.apply(*v));
                        }
                        None => {}
                    }
                    if let Some(mask) = mask {
                        for (v, keep) in weight.iter_mut().zip(mask) {
                            if !keep {
                                *v = 0.0;
                            }
                        }
                    }
                    node.params.insert("weight".into(), Tensor::matrix(*n_out, *n_in, weight));
                    node.params.insert("bias".into(), Tensor::vector(bias));
                }
                Op::BatchNorm { node, n, gamma, beta, mean, var, .. } => {
                    let node = &mut g.nodes[*node];
                    node.params.insert("gamma".into(), Tensor::vector(self.params[*gamma..gamma + n].to_vec()));
                    node.params.insert("beta".into(), Tensor::vector(self.params[*beta..beta + n].to_vec()));
                    node.params.insert("moving_mean".into(), Tensor::vector(mean.clone()));
                    node.params.insert("moving_variance".into(), Tensor::vector(var.clone()));
                }
                Op::Relu | Op::Softmax => {}
            }
        }
        g
    }
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn batch_moments(x: &[f64], batch: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let bf = batch as f64;
    let mut mean = vec![0.0; n];
    for s in 0..batch {
        for c in 0..n {
            mean[c] += x[s * n + c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= bf);
    let mut var = vec![0.0; n];
    for s in 0..batch {
        for c in 0..n {
            let d = x[s * n + c] - mean[c];
            var[c] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= bf);
    (mean, var)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let batch = labels.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (s, &label) in labels.iter().enumerate() {
        let z = &logits[s * classes..(s + 1) * classes];
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - z[label];
        for c in 0..classes {
            let p = (z[c] - log_sum).exp();
            grad[s * classes + c] = (p - if c == label { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    (loss / batch as f64, grad)
}

/// A `dense, relu, ..., dense[, softmax]` chain with uniform
/// `+-sqrt(6 / (fan_in + fan_out))` weight initialization and zero biases.
pub fn mlp(
    name: &str,
    input_width: usize,
    hidden: &[usize],
    outputs: usize,
    softmax: bool,
    seed: u64,
) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut fan_in = input_width;
    let widths: Vec<usize> = hidden.iter().copied().chain([outputs]).collect();
    for (k, &fan_out) in widths.iter().enumerate() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
        layers.push(LayerNode::dense(
            format!("dense_{}", k + 1),
            Tensor::matrix(fan_out, fan_in, w),
            Tensor::vector(vec![0.0; fan_out]),
        ));
        if k + 1 < widths.len() {
            layers.push(LayerNode::new(format!("relu_{}", k + 1), LayerKind::Relu));
        }
        fan_in = fan_out;
    }
    if softmax {
        layers.push(LayerNode::new("softmax", LayerKind::Softmax));
    }
    ModelGraph::chain(name, input_width, FixedSpec::default(), layers)
}
