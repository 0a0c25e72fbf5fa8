// SPDX-License-Identifier: Apache-2.0

//! Dataflow IR for fully-connected networks.
//!
//! A [`ModelGraph`] is an ordered list of [`LayerNode`]s. Edges come from
//! each node's `inputs` list; the first node is always the `input` node.
//! Only single chains are accepted by [`validate`], but the representation
//! (named predecessors) leaves room for DAGs.

mod document;
mod tensor;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed_point::FixedSpec;

pub use document::{parse_model, parse_model_unchecked, serialize_model, FORMAT_VERSION};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid tensor: {0}")]
    Tensor(String),
    #[error("validation failed:\n{}", format_diagnostics(.0))]
    Validation(Vec<Diagnostic>),
    #[error("cycle through layers {0:?}")]
    Cycle(Vec<String>),
    #[error("layer `{layer}` references unknown input `{input}`")]
    UnknownInput { layer: String, input: String },
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Dense,
    Relu,
    BatchNorm,
    BinaryTanh,
    TernaryTanh,
    Softmax,
    /// Per-channel sign threshold, produced by fusing batch norm into a
    /// binary tanh.
    Threshold,
    /// Emits a fixed tensor regardless of its input.
    Constant,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Dense => "dense",
            LayerKind::Relu => "relu",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::BinaryTanh => "binary_tanh",
            LayerKind::TernaryTanh => "ternary_tanh",
            LayerKind::Softmax => "softmax",
            LayerKind::Threshold => "threshold",
            LayerKind::Constant => "constant",
        }
    }

    /// Parameter names this kind requires.
    pub fn required_params(&self) -> &'static [&'static str] {
        match self {
            LayerKind::Dense => &["weight", "bias"],
            LayerKind::BatchNorm => &["gamma", "beta", "moving_mean", "moving_variance", "epsilon"],
            LayerKind::Threshold => &["threshold", "direction"],
            LayerKind::Constant => &["value"],
            _ => &[],
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Formats used at one layer boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrecisionSet {
    pub weight: FixedSpec,
    pub bias: FixedSpec,
    pub accumulator: FixedSpec,
    pub result: FixedSpec,
}

impl PrecisionSet {
    pub fn uniform(spec: FixedSpec) -> Self {
        Self {
            weight: spec,
            bias: spec,
            accumulator: spec,
            result: spec,
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.weight == self.bias && self.bias == self.accumulator && self.accumulator == self.result
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub name: String,
    pub kind: LayerKind,
    pub params: BTreeMap<String, Tensor>,
    pub precision: PrecisionSet,
    pub reuse_factor: u32,
    pub compression: bool,
    /// Predecessor names; empty only for the input node.
    pub inputs: Vec<String>,
}

impl LayerNode {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
            params: BTreeMap::new(),
            precision: PrecisionSet::default(),
            reuse_factor: 1,
            compression: false,
            inputs: Vec::new(),
        }
    }

    pub fn input(name: impl Into<String>, spec: FixedSpec) -> Self {
        let mut node = Self::new(name, LayerKind::Input);
        node.precision = PrecisionSet::uniform(spec);
        node
    }

    /// `weight` is `[outputs x inputs]`.
    pub fn dense(name: impl Into<String>, weight: Tensor, bias: Tensor) -> Self {
        Self::new(name, LayerKind::Dense)
            .with_param("weight", weight)
            .with_param("bias", bias)
    }

    pub fn batch_norm(
        name: impl Into<String>,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        mean: Vec<f64>,
        variance: Vec<f64>,
        epsilon: f64,
    ) -> Self {
        Self::new(name, LayerKind::BatchNorm)
            .with_param("gamma", Tensor::vector(gamma))
            .with_param("beta", Tensor::vector(beta))
            .with_param("moving_mean", Tensor::vector(mean))
            .with_param("moving_variance", Tensor::vector(variance))
            .with_param("epsilon", Tensor::scalar(epsilon))
    }

    pub fn with_param(mut self, key: &str, t: Tensor) -> Self {
        self.params.insert(key.to_string(), t);
        self
    }

    pub fn with_precision(mut self, p: PrecisionSet) -> Self {
        self.precision = p;
        self
    }

    pub fn with_reuse(mut self, r: u32) -> Self {
        self.reuse_factor = r;
        self
    }

    pub fn with_compression(mut self, c: bool) -> Self {
        self.compression = c;
        self
    }

    pub fn param(&self, key: &str) -> Option<&Tensor> {
        self.params.get(key)
    }

    /// `(n_in, n_out)` of a dense layer's weight.
    pub fn dense_dims(&self) -> Option<(usize, usize)> {
        if self.kind != LayerKind::Dense {
            return None;
        }
        self.param("weight")?.dims2().map(|(out, inp)| (inp, out))
    }
}

/// Layer name plus the rule it breaks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub layer: String,
    pub rule: String,
    pub message: String,
}

impl Diagnostic {
    fn new(layer: &str, rule: &str, message: impl Into<String>) -> Self {
        Self {
            layer: layer.to_string(),
            rule: rule.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.rule, self.layer, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub nodes: Vec<LayerNode>,
}

impl ModelGraph {
    /// Builds a chain: an input node followed by `layers`, each fed by the
    /// one before it. Nothing is validated.
    pub fn chain(
        name: impl Into<String>,
        input_width: usize,
        input_spec: FixedSpec,
        layers: Vec<LayerNode>,
    ) -> Self {
        let mut nodes = vec![LayerNode::input("input", input_spec)];
        for mut layer in layers {
            if layer.inputs.is_empty() {
                layer.inputs = vec![nodes.last().unwrap().name.clone()];
            }
            nodes.push(layer);
        }
        Self {
            name: name.into(),
            input_shape: vec![input_width],
            nodes,
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn node(&self, name: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn node_mut(&mut self, name: &str) -> Option<&mut LayerNode> {
        self.nodes.iter_mut().find(|n| n.name == name)
    }

    pub fn successors(&self, name: &str) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.inputs.iter().any(|i| i == name))
            .map(|(i, _)| i)
            .collect()
    }

    /// Sole successor of `name`, if it has exactly one.
    pub fn single_successor(&self, name: &str) -> Option<usize> {
        match self.successors(name).as_slice() {
            [one] => Some(*one),
            _ => None,
        }
    }

    /// Copy with the input format set to `input` and every other layer's
    /// accumulator and result formats set to `accumulator` and `result`.
    pub fn with_datapath(&self, input: FixedSpec, accumulator: FixedSpec, result: FixedSpec) -> Self {
        let mut g = self.clone();
        for node in &mut g.nodes {
            if node.kind == LayerKind::Input {
                node.precision = PrecisionSet::uniform(input);
            } else {
                node.precision.accumulator = accumulator;
                node.precision.result = result;
            }
        }
        g
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = &LayerNode> {
        self.nodes.iter().filter(|n| n.kind == LayerKind::Dense)
    }

    /// Node indices with every node after its predecessors; ties broken by
    /// declaration order.
    pub fn topo_order(&self) -> Result<Vec<usize>, ModelError> {
        let index: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.name.as_str(), i))
            .collect();
        let mut pending = vec![0usize; self.nodes.len()];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for input in &n.inputs {
                let &p = index
                    .get(input.as_str())
                    .ok_or_else(|| ModelError::UnknownInput {
                        layer: n.name.clone(),
                        input: input.clone(),
                    })?;
                pending[i] += 1;
                succ[p].push(i);
            }
        }
        let mut ready: std::collections::BTreeSet<usize> =
            (0..self.nodes.len()).filter(|&i| pending[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &s in &succ[i] {
                pending[s] -= 1;
                if pending[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = (0..self.nodes.len())
                .filter(|&i| pending[i] > 0)
                .map(|i| self.nodes[i].name.clone())
                .collect();
            return Err(ModelError::Cycle(stuck));
        }
        Ok(order)
    }

    /// Nodes in topological order.
    pub fn ordered_nodes(&self) -> Result<Vec<&LayerNode>, ModelError> {
        Ok(self.topo_order()?.into_iter().map(|i| &self.nodes[i]).collect())
    }

    /// Output width of every node, indexed like `nodes`.
    pub fn output_widths(&self) -> Result<Vec<usize>, ModelError> {
        let (widths, diags) = self.infer_widths();
        if !diags.is_empty() {
            return Err(ModelError::Validation(diags));
        }
        Ok(widths.into_iter().map(|w| w.unwrap_or(0)).collect())
    }

    pub fn output_width(&self) -> Result<usize, ModelError> {
        let order = self.topo_order()?;
        let widths = self.output_widths()?;
        Ok(order.last().map(|&i| widths[i]).unwrap_or(0))
    }

    fn infer_widths(&self) -> (Vec<Option<usize>>, Vec<Diagnostic>) {
        let mut widths = vec![None; self.nodes.len()];
        let mut diags = Vec::new();
        let order = match self.topo_order() {
            Ok(o) => o,
            Err(e) => {
                diags.push(Diagnostic::new(&self.name, "graph", e.to_string()));
                return (widths, diags);
            }
        };
        for i in order {
            let node = &self.nodes[i];
            let in_width = node
                .inputs
                .first()
                .and_then(|p| self.index_of(p))
                .and_then(|p| widths[p]);
            widths[i] = match node.kind {
                LayerKind::Input => Some(self.input_width()),
                LayerKind::Constant => node.param("value").map(Tensor::len),
                LayerKind::Dense => {
                    let Some((n_in, n_out)) = node.dense_dims() else {
                        if node.param("weight").is_some() {
                            diags.push(Diagnostic::new(
                                &node.name,
                                "shape",
                                "dense weight must be 2-D [outputs x inputs]",
                            ));
                        }
                        continue;
                    };
                    if let Some(w) = in_width {
                        if w != n_in {
                            diags.push(Diagnostic::new(
                                &node.name,
                                "shape",
                                format!("weight expects {n_in} inputs but predecessor produces {w}"),
                            ));
                        }
                    }
                    if let Some(b) = node.param("bias") {
                        if b.shape() != [n_out] {
                            diags.push(Diagnostic::new(
                                &node.name,
                                "shape",
                                format!("bias shape {:?} does not match {n_out} outputs", b.shape()),
                            ));
                        }
                    }
                    Some(n_out)
                }
                LayerKind::BatchNorm | LayerKind::Threshold => {
                    if let Some(w) = in_width {
                        for key in node.kind.required_params() {
                            if *key == "epsilon" {
                                continue;
                            }
                            if let Some(t) = node.param(key) {
                                if t.len() != w {
                                    diags.push(Diagnostic::new(
                                        &node.name,
                                        "shape",
                                        format!("`{key}` has {} channels, input has {w}", t.len()),
                                    ));
                                }
                            }
                        }
                    }
                    in_width
                }
                _ => in_width,
            };
        }
        (widths, diags)
    }
}

/// Every violated invariant, empty when the graph is well formed.
pub fn validate(graph: &ModelGraph) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut seen = HashMap::new();
    for n in &graph.nodes {
        if n.name.is_empty() {
            diags.push(Diagnostic::new("<unnamed>", "name", "layer name is empty"));
        }
        if seen.insert(n.name.as_str(), ()).is_some() {
            diags.push(Diagnostic::new(&n.name, "name", "duplicate layer name"));
        }
    }
    if graph.input_shape.is_empty() || graph.input_shape.contains(&0) {
        diags.push(Diagnostic::new(
            &graph.name,
            "input_shape",
            "input shape must be non-empty with positive extents",
        ));
    }

    for (i, n) in graph.nodes.iter().enumerate() {
        let is_first = i == 0;
        match (is_first, n.kind == LayerKind::Input) {
            (true, false) => {
                diags.push(Diagnostic::new(&n.name, "input", "first node must be the input"))
            }
            (false, true) => {
                diags.push(Diagnostic::new(&n.name, "input", "only one input node allowed"))
            }
            _ => {}
        }
        if n.kind == LayerKind::Input {
            if !n.inputs.is_empty() {
                diags.push(Diagnostic::new(&n.name, "chain", "input node has predecessors"));
            }
        } else if n.inputs.len() != 1 {
            diags.push(Diagnostic::new(
                &n.name,
                "chain",
                format!("expected exactly one input, found {}", n.inputs.len()),
            ));
        } else if graph.index_of(&n.inputs[0]).is_none() {
            diags.push(Diagnostic::new(
                &n.name,
                "chain",
                format!("unknown input `{}`", n.inputs[0]),
            ));
        }
        if graph.successors(&n.name).len() > 1 {
            diags.push(Diagnostic::new(&n.name, "chain", "branching is not supported"));
        }

        if n.reuse_factor < 1 {
            diags.push(Diagnostic::new(&n.name, "reuse_factor", "reuse_factor must be >= 1"));
        } else if n.kind != LayerKind::Dense && n.reuse_factor != 1 {
            diags.push(Diagnostic::new(
                &n.name,
                "reuse_factor",
                "reuse_factor applies to dense layers only",
            ));
        }
        if n.compression && n.kind != LayerKind::Dense {
            diags.push(Diagnostic::new(
                &n.name,
                "compression",
                "compression applies to dense layers only",
            ));
        }

        let required = n.kind.required_params();
        for key in required {
            if n.param(key).is_none() {
                diags.push(Diagnostic::new(
                    &n.name,
                    "params",
                    format!("missing parameter `{key}`"),
                ));
            }
        }
        for key in n.params.keys() {
            if !required.contains(&key.as_str()) {
                diags.push(Diagnostic::new(
                    &n.name,
                    "params",
                    format!("unexpected parameter `{key}` for {}", n.kind),
                ));
            }
        }
        match n.kind {
            LayerKind::BatchNorm => {
                if let Some(eps) = n.param("epsilon") {
                    if eps.len() != 1 || eps.data()[0] < 0.0 {
                        diags.push(Diagnostic::new(
                            &n.name,
                            "params",
                            "epsilon must be a single non-negative value",
                        ));
                    }
                }
            }
            LayerKind::Threshold => {
                if let Some(d) = n.param("direction") {
                    if d.data().iter().any(|v| ![-1.0, 0.0, 1.0].contains(v)) {
                        diags.push(Diagnostic::new(
                            &n.name,
                            "params",
                            "direction entries must be -1, 0 or 1",
                        ));
                    }
                }
            }
            _ => {}
        }
    }

    let (_, shape_diags) = graph.infer_widths();
    diags.extend(shape_diags);
    diags
}
