// SPDX-License-Identifier: Apache-2.0

//! Static resource and timing model for dense layers.
//!
//! DSP tiling and LUT counts are a model, not vendor truth.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model_ir::{LayerKind, LayerNode, ModelError, ModelGraph};
use crate::pruning::{apply_masks, quantized_zero_fraction, PruneState};

pub use crate::pruning::compute_bops;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub clock_mhz: f64,
    /// Multiplies whose operands are both at most this wide map to LUTs.
    pub lut_threshold: u32,
    /// Cycles added to every dense layer's latency.
    pub pipeline_constant: u32,
    /// Cycles per boundary between consecutive dense layers.
    pub interconnect_constant: u32,
    /// LUT heuristic coefficients: `c1` per LUT-mapped multiplier bit
    /// product, `c2` per output accumulator bit.
    pub lut_c1: f64,
    pub lut_c2: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            clock_mhz: 200.0,
            lut_threshold: 9,
            pipeline_constant: 3,
            interconnect_constant: 1,
            lut_c1: 1.0,
            lut_c2: 1.0,
        }
    }
}

/// DSP blocks needed for one `b1 x b2` multiply with 25x18-bit blocks.
pub fn dsp_per_multiply(b1: u32, b2: u32, lut_threshold: u32) -> u32 {
    if b1.max(b2) <= lut_threshold {
        return 0;
    }
    let tiles = |a: u32, b: u32| a.div_ceil(25) * b.div_ceil(18);
    tiles(b1, b2).min(tiles(b2, b1))
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEstimate {
    pub layer: String,
    pub n_in: usize,
    pub n_out: usize,
    pub weight_bits: u32,
    pub activation_bits: u32,
    pub pruned_fraction: f64,
    pub reuse_factor: u32,
    /// Nonzero multiplications per inference.
    pub n_mult: u64,
    /// Physical multipliers, `ceil(n_mult / R)`.
    pub multipliers: u64,
    pub dsp: u64,
    /// Heuristic.
    pub lut_estimate: u64,
    pub bops: f64,
    pub latency_cycles: u64,
    pub ii_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub dsp_total: u64,
    /// Heuristic.
    pub lut_estimate: u64,
    pub bops_total: f64,
    pub per_layer: Vec<LayerEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub layer: String,
    pub latency_cycles: u64,
    pub ii_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEstimate {
    pub clock_mhz: f64,
    pub per_layer: Vec<LayerTiming>,
    pub total_latency_cycles: u64,
    pub model_ii_cycles: u64,
    /// Zero for a model without dense layers.
    pub throughput_inferences_per_second: f64,
}

impl TimingEstimate {
    pub fn ii_ns(&self) -> f64 {
        self.model_ii_cycles as f64 * 1000.0 / self.clock_mhz
    }

    pub fn latency_ns(&self) -> f64 {
        self.total_latency_cycles as f64 * 1000.0 / self.clock_mhz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEstimate {
    pub resources: ResourceEstimate,
    pub timing: TimingEstimate,
}

/// Cost of one dense layer with `activation_bits`-wide inputs and pruned
/// fraction `f_p`. `n_mult = round((1 - f_p) n_in n_out)`.
pub fn estimate_layer(layer: &LayerNode, activation_bits: u32, f_p: f64, cfg: &EstimatorConfig) -> LayerEstimate {
    let (n_in, n_out) = layer.dense_dims().expect("dense layer");
    let r = layer.reuse_factor.max(1) as u64;
    let b_w = layer.precision.weight.width();
    let n_mult = ((1.0 - f_p) * (n_in * n_out) as f64).round() as u64;
    let multipliers = n_mult.div_ceil(r);
    let per_mult = dsp_per_multiply(b_w, activation_bits, cfg.lut_threshold) as u64;
    let lut_mapped = if per_mult == 0 { multipliers } else { 0 };
    let lut = cfg.lut_c1 * (lut_mapped * b_w as u64 * activation_bits as u64) as f64
        + cfg.lut_c2 * (n_out as u64 * layer.precision.accumulator.width() as u64) as f64;
    LayerEstimate {
        layer: layer.name.clone(),
        n_in,
        n_out,
        weight_bits: b_w,
        activation_bits,
        pruned_fraction: f_p,
        reuse_factor: r as u32,
        n_mult,
        multipliers,
        dsp: multipliers * per_mult,
        lut_estimate: lut.round() as u64,
        bops: compute_bops(n_in, n_out, b_w, activation_bits, f_p),
        latency_cycles: r + ceil_log2(n_in) as u64 + cfg.pipeline_constant as u64,
        ii_cycles: r,
    }
}

/// Roll-up over the dense layers of `graph` in topological order. A
/// layer's pruned fraction counts weights that are masked by `state` or
/// quantize to zero in the layer's weight format.
pub fn estimate_model(graph: &ModelGraph, state: Option<&PruneState>, cfg: &EstimatorConfig) -> Result<ModelEstimate, ModelError> {
    let mut g = graph.clone();
    if let Some(s) = state {
        apply_masks(&mut g, &s.masks);
    }
    let mut per_layer = Vec::new();
    for node in g.ordered_nodes()? {
        if node.kind != LayerKind::Dense {
            continue;
        }
        let feed = node.inputs.first().and_then(|i| g.node(i)).expect("dense layer has an input");
        per_layer.push(estimate_layer(node, feed.precision.result.width(), quantized_zero_fraction(node), cfg));
    }
    let timing_rows: Vec<LayerTiming> = per_layer
        .iter()
        .map(|l| LayerTiming {
            layer: l.layer.clone(),
            latency_cycles: l.latency_cycles,
            ii_cycles: l.ii_cycles,
        })
        .collect();
    let boundaries = per_layer.len().saturating_sub(1) as u64;
    let model_ii = per_layer.iter().map(|l| l.ii_cycles).max().unwrap_or(0);
    let timing = TimingEstimate {
        clock_mhz: cfg.clock_mhz,
        total_latency_cycles: per_layer.iter().map(|l| l.latency_cycles).sum::<u64>()
            + cfg.interconnect_constant as u64 * boundaries,
        model_ii_cycles: model_ii,
        throughput_inferences_per_second: if model_ii == 0 { 0.0 } else { cfg.clock_mhz * 1e6 / model_ii as f64 },
        per_layer: timing_rows,
    };
    let resources = ResourceEstimate {
        dsp_total: per_layer.iter().map(|l| l.dsp).sum(),
        lut_estimate: per_layer.iter().map(|l| l.lut_estimate).sum(),
        bops_total: per_layer.iter().map(|l| l.bops).sum(),
        per_layer,
    };
    Ok(ModelEstimate { resources, timing })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub reuse: u32,
    pub ii_cycles: u64,
    pub ii_ns: f64,
    pub latency: u64,
    pub dsp: u64,
    pub multiplications: u64,
    pub throughput: f64,
}

/// Estimates with every dense layer's reuse factor set to each value.
pub fn reuse_sweep(graph: &ModelGraph, reuses: &[u32], cfg: &EstimatorConfig) -> Result<Vec<SweepRow>, ModelError> {
    reuses
        .iter()
        .map(|&r| {
            let mut g = graph.clone();
            for n in g.nodes.iter_mut().filter(|n| n.kind == LayerKind::Dense) {
                n.reuse_factor = r;
            }
            let e = estimate_model(&g, None, cfg)?;
            Ok(SweepRow {
                reuse: r,
                ii_cycles: e.timing.model_ii_cycles,
                ii_ns: e.timing.ii_ns(),
                latency: e.timing.total_latency_cycles,
                dsp: e.resources.dsp_total,
                multiplications: e.resources.per_layer.iter().map(|l| l.n_mult).sum(),
                throughput: e.timing.throughput_inferences_per_second,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("reuse,ii_cycles,ii_ns,latency,dsp,multiplications,throughput\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.reuse, r.ii_cycles, r.ii_ns, r.latency, r.dsp, r.multiplications, r.throughput
        );
    }
    s
}
