// SPDX-License-Identifier: Apache-2.0

//! Parameter statistics and precision-coverage checks.

use serde::{Deserialize, Serialize};

use crate::fixed_point::{quantize, FixedSpec, Overflow};
use crate::model_ir::{LayerKind, ModelGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Weight = 0,
    Bias = 1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub spec: FixedSpec,
    /// The largest-magnitude value quantizes (saturating) within one ulp.
    pub covered: bool,
    /// `log2(range_upper / max_abs)`; `None` for an all-zero tensor.
    pub margin_bits: Option<f64>,
}

/// Box-plot statistics over the nonzero magnitudes of one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorProfile {
    pub layer: String,
    pub kind: TensorKind,
    pub count: usize,
    pub zero_fraction: f64,
    pub max_abs: f64,
    /// `None` when every value is zero; likewise for the fields below.
    pub min_abs_nonzero: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub whisker_low: Option<f64>,
    pub whisker_high: Option<f64>,
    pub coverage: Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub tensors: Vec<TensorProfile>,
    pub notes: Vec<String>,
}

/// Linear interpolation between closest ranks: `h = (n - 1) p`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn coverage(values: &[f64], spec: FixedSpec) -> Coverage {
    let extreme = values.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
    let sat = spec.overflow_mode(Overflow::Saturate);
    let err = (quantize(extreme, sat).to_f64() - extreme).abs();
    Coverage {
        spec,
        covered: err < spec.ulp(),
        margin_bits: (extreme != 0.0).then(|| (spec.range_upper() / extreme.abs()).log2()),
    }
}

fn profile_tensor(layer: &str, kind: TensorKind, values: &[f64], spec: FixedSpec) -> TensorProfile {
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).filter(|v| *v > 0.0).collect();
    mags.sort_by(f64::total_cmp);
    let zero_fraction = 1.0 - mags.len() as f64 / values.len() as f64;
    let (q1, median, q3, lo, hi) = if mags.is_empty() {
        (None, None, None, None, None)
    } else {
        let (q1, q2, q3) = (percentile(&mags, 0.25), percentile(&mags, 0.5), percentile(&mags, 0.75));
        let iqr = q3 - q1;
        let lo = (q1 - 1.5 * iqr).max(mags[0]);
        let hi = (q3 + 1.5 * iqr).min(*mags.last().unwrap());
        (Some(q1), Some(q2), Some(q3), Some(lo), Some(hi))
    };
    TensorProfile {
        layer: layer.to_string(),
        kind,
        count: values.len(),
        zero_fraction,
        max_abs: mags.last().copied().unwrap_or(0.0),
        min_abs_nonzero: mags.first().copied(),
        q1,
        median,
        q3,
        whisker_low: lo,
        whisker_high: hi,
        coverage: coverage(values, spec),
    }
}

/// Statistics of every dense weight and bias tensor, in graph order.
pub fn profile_weights(graph: &ModelGraph) -> ProfileReport {
    let mut tensors = Vec::new();
    let mut notes = Vec::new();
    for node in graph.nodes.iter().filter(|n| n.kind == LayerKind::Dense) {
        for (key, kind, spec) in [
            ("weight", TensorKind::Weight, node.precision.weight),
            ("bias", TensorKind::Bias, node.precision.bias),
        ] {
            match node.param(key) {
                Some(t) if !t.is_empty() => tensors.push(profile_tensor(&node.name, kind, t.data(), spec)),
                _ => notes.push(format!("{}.{key}: empty, skipped", node.name)),
            }
        }
    }
    ProfileReport { tensors, notes }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageFinding {
    pub layer: String,
    pub kind: TensorKind,
    pub severity: Severity,
    pub message: String,
}

/// A warning per tensor whose largest value the layer's format cannot
/// hold, and an info entry per tensor with nonzero values below one ulp.
pub fn check_coverage(report: &ProfileReport, graph: &ModelGraph) -> Vec<CoverageFinding> {
    let mut out = Vec::new();
    for t in &report.tensors {
        let Some(node) = graph.node(&t.layer) else { continue };
        let spec = match t.kind {
            TensorKind::Weight => node.precision.weight,
            TensorKind::Bias => node.precision.bias,
        };
        let values = node.param(match t.kind {
            TensorKind::Weight => "weight",
            TensorKind::Bias => "bias",
        });
        let cov = values.map_or_else(|| t.coverage.clone(), |v| coverage(v.data(), spec));
        if !cov.covered {
            out.push(CoverageFinding {
                layer: t.layer.clone(),
                kind: t.kind,
                severity: Severity::Warning,
                message: format!("max |value| {} exceeds the range of {spec}", t.max_abs),
            });
        }
        if let Some(min) = t.min_abs_nonzero {
            if min < spec.ulp() {
                out.push(CoverageFinding {
                    layer: t.layer.clone(),
                    kind: t.kind,
                    severity: Severity::Info,
                    message: format!("min |value| {min} is below the ulp {} of {spec}", spec.ulp()),
                });
            }
        }
    }
    out
}
