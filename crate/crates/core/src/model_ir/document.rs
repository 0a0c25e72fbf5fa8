// SPDX-License-Identifier: Apache-2.0

//! The native model document (JSON, `format_version` "1").

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{validate, LayerKind, LayerNode, ModelError, ModelGraph, PrecisionSet, Tensor};
use crate::fixed_point::FixedSpec;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_precision: Option<FixedSpec>,
    layers: Vec<LayerDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDocument {
    name: String,
    kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inputs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    params: BTreeMap<String, Tensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    precision: Option<PrecisionDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reuse_factor: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    compression: Option<bool>,
}

/// Either one spec for all four slots, or any subset of the slots.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PrecisionDocument {
    Uniform(FixedSpec),
    Parts(PrecisionParts),
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrecisionParts {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<FixedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<FixedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    accumulator: Option<FixedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    result: Option<FixedSpec>,
}

impl PrecisionDocument {
    fn resolve(&self) -> PrecisionSet {
        match self {
            PrecisionDocument::Uniform(s) => PrecisionSet::uniform(*s),
            PrecisionDocument::Parts(p) => {
                let d = FixedSpec::default();
                PrecisionSet {
                    weight: p.weight.unwrap_or(d),
                    bias: p.bias.unwrap_or(d),
                    accumulator: p.accumulator.unwrap_or(d),
                    result: p.result.unwrap_or(d),
                }
            }
        }
    }

    fn canonical(p: &PrecisionSet) -> Self {
        if p.is_uniform() {
            PrecisionDocument::Uniform(p.weight)
        } else {
            PrecisionDocument::Parts(PrecisionParts {
                weight: Some(p.weight),
                bias: Some(p.bias),
                accumulator: Some(p.accumulator),
                result: Some(p.result),
            })
        }
    }
}

/// Parses a model document and builds the graph without validating it.
pub fn parse_model_unchecked(text: &str) -> Result<ModelGraph, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ModelDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ModelError::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    if doc.format_version != FORMAT_VERSION {
        return Err(ModelError::Parse {
            path: "format_version".into(),
            message: format!(
                "unsupported version `{}` (expected \"{FORMAT_VERSION}\")",
                doc.format_version
            ),
        });
    }

    let input_spec = doc.input_precision.unwrap_or_default();
    let mut nodes: Vec<LayerNode> = Vec::with_capacity(doc.layers.len() + 1);
    let explicit_input = doc
        .layers
        .first()
        .is_some_and(|l| l.kind == LayerKind::Input);
    if !explicit_input {
        nodes.push(LayerNode::input("input", input_spec));
    }
    for (i, layer) in doc.layers.into_iter().enumerate() {
        if layer.kind == LayerKind::Input && i > 0 {
            return Err(ModelError::Parse {
                path: format!("layers[{i}].kind"),
                message: "input layer may only appear first".into(),
            });
        }
        let precision = match (&layer.precision, layer.kind) {
            (Some(p), _) => p.resolve(),
            (None, LayerKind::Input) => PrecisionSet::uniform(input_spec),
            (None, _) => PrecisionSet::default(),
        };
        let inputs = match (layer.inputs, nodes.last()) {
            (Some(explicit), _) => explicit,
            (None, _) if layer.kind == LayerKind::Input => Vec::new(),
            (None, Some(prev)) => vec![prev.name.clone()],
            (None, None) => Vec::new(),
        };
        nodes.push(LayerNode {
            name: layer.name,
            kind: layer.kind,
            params: layer.params,
            precision,
            reuse_factor: layer.reuse_factor.unwrap_or(1),
            compression: layer.compression.unwrap_or(false),
            inputs,
        });
    }
    Ok(ModelGraph {
        name: doc.name.unwrap_or_else(|| "model".into()),
        input_shape: doc.input_shape,
        nodes,
    })
}

/// Parses and validates a model document.
pub fn parse_model(text: &str) -> Result<ModelGraph, ModelError> {
    let graph = parse_model_unchecked(text)?;
    let diags = validate(&graph);
    if diags.is_empty() {
        Ok(graph)
    } else {
        Err(ModelError::Validation(diags))
    }
}

/// Canonical form: explicit input layer, defaults written out, `inputs`
/// omitted where they follow declaration order.
pub fn serialize_model(graph: &ModelGraph) -> String {
    let mut layers = Vec::with_capacity(graph.nodes.len());
    let mut prev: Option<&str> = None;
    for node in &graph.nodes {
        let default_inputs: Vec<String> = prev.map(|p| vec![p.to_string()]).unwrap_or_default();
        let inputs = if node.kind == LayerKind::Input && node.inputs.is_empty()
            || node.kind != LayerKind::Input && node.inputs == default_inputs
        {
            None
        } else {
            Some(node.inputs.clone())
        };
        let dense = node.kind == LayerKind::Dense;
        layers.push(LayerDocument {
            name: node.name.clone(),
            kind: node.kind,
            inputs,
            params: node.params.clone(),
            precision: Some(PrecisionDocument::canonical(&node.precision)),
            reuse_factor: (dense || node.reuse_factor != 1).then_some(node.reuse_factor),
            compression: (dense || node.compression).then_some(node.compression),
        });
        prev = Some(&node.name);
    }
    let input_precision = graph
        .nodes
        .first()
        .filter(|n| n.kind == LayerKind::Input)
        .map(|n| n.precision.result);
    let doc = ModelDocument {
        format_version: FORMAT_VERSION.into(),
        name: Some(graph.name.clone()),
        input_shape: graph.input_shape.clone(),
        input_precision,
        layers,
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("model document serializes");
    out.push('\n');
    out
}
