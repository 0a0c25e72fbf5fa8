// SPDX-License-Identifier: Apache-2.0

//! Iterative magnitude pruning with optional weight rewinding and
//! quantization-aware retraining, plus bit-operation (BOPs) accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed_point::quantize;
use crate::model_ir::{LayerKind, LayerNode, ModelError, ModelGraph, Tensor};
use crate::trainer::{self, evaluate, train_masked, Arithmetic, Dataset, Masks, TrainError, TrainingConfig};

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("requested fraction {requested} is below the current pruned fraction {current}")]
    Regression { requested: f64, current: f64 },
    #[error("no surviving weights left to prune")]
    NoSurvivors,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Bit operations of an `n`-input, `m`-output dense layer with `b_w`-bit
/// weights, `b_a`-bit activations and pruned fraction `f_p`.
pub fn compute_bops(n: usize, m: usize, b_w: u32, b_a: u32, f_p: f64) -> f64 {
    let (n_f, m_f, bw, ba) = (n as f64, m as f64, b_w as f64, b_a as f64);
    m_f * n_f * ((1.0 - f_p) * ba * bw + ba + bw + n_f.log2())
}

/// Sum of [`compute_bops`] over consecutive dense layers of the given
/// widths (`[n_0, n_1, ..]`) at uniform bits and pruned fraction.
pub fn architecture_bops(widths: &[usize], b_w: u32, b_a: u32, f_p: f64) -> f64 {
    widths.windows(2).map(|p| compute_bops(p[0], p[1], b_w, b_a, f_p)).sum()
}

/// Fraction of a dense layer's weights that are zero once quantized to
/// the layer's weight format.
pub fn quantized_zero_fraction(node: &LayerNode) -> f64 {
    let w = node.param("weight").expect("dense weight").data();
    let zeros = w.iter().filter(|v| quantize(**v, node.precision.weight).raw() == 0).count();
    zeros as f64 / w.len() as f64
}

/// `(name, n_in, n_out, b_w, b_a, f_p)` of one dense layer.
pub type LayerBopsInput = (String, usize, usize, u32, u32, f64);

/// Per dense layer: `(name, n_in, n_out, b_w, b_a, f_p)`. Weight bits come
/// from the layer's weight format, activation bits from the result format
/// of the feeding layer, and `f_p` is [`quantized_zero_fraction`].
pub fn layer_bops_inputs(graph: &ModelGraph) -> Result<Vec<LayerBopsInput>, ModelError> {
    let mut out = Vec::new();
    for node in graph.ordered_nodes()? {
        if node.kind != LayerKind::Dense {
            continue;
        }
        let (n_in, n_out) = node.dense_dims().expect("dense layer has a 2-D weight");
        let feed = node.inputs.first().and_then(|i| graph.node(i)).expect("dense layer has an input");
        out.push((
            node.name.clone(),
            n_in,
            n_out,
            node.precision.weight.width(),
            feed.precision.result.width(),
            quantized_zero_fraction(node),
        ));
    }
    Ok(out)
}

/// Sum of per-layer BOPs over the dense layers of `graph`.
pub fn model_bops(graph: &ModelGraph) -> Result<f64, ModelError> {
    Ok(layer_bops_inputs(graph)?
        .into_iter()
        .map(|(_, n, m, bw, ba, fp)| compute_bops(n, m, bw, ba, fp))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMethod {
    /// Retrain with masks and the configured L1 penalty.
    L1Retrain,
    /// Rewind survivors to their initial values before each retrain.
    LtRewind,
    /// Rewinding with quantization-aware retraining.
    Qap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    /// Fraction of the original weights pruned per iteration.
    pub increment: f64,
    pub target_fraction: f64,
    pub retrain_epochs: usize,
    pub method: PruneMethod,
    /// Rank within each layer instead of globally.
    #[serde(default)]
    pub per_layer: bool,
    /// Arithmetic used for the per-iteration metrics.
    #[serde(default = "real")]
    pub arithmetic: Arithmetic,
}

fn real() -> Arithmetic {
    Arithmetic::Real
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            increment: 0.1,
            target_fraction: 0.8,
            retrain_epochs: 30,
            method: PruneMethod::L1Retrain,
            per_layer: false,
            arithmetic: Arithmetic::Real,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<(), PruneError> {
        if self.target_fraction == 0.0 {
            return Ok(());
        }
        if !(self.increment > 0.0 && self.increment <= self.target_fraction && self.target_fraction <= 1.0) {
            return Err(PruneError::Schedule(format!(
                "need 0 < increment ({}) <= target_fraction ({}) <= 1",
                self.increment, self.target_fraction
            )));
        }
        if self.retrain_epochs == 0 {
            return Err(PruneError::Schedule("retrain_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    /// Global pruned fraction over all dense weights.
    pub pruned_fraction: f64,
    pub layer_fractions: BTreeMap<String, f64>,
    pub accuracy: f64,
    pub auc: f64,
    pub bops: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneState {
    pub masks: Masks,
    /// The model as it was before any pruning.
    pub initial_weights: ModelGraph,
    pub history: Vec<HistoryEntry>,
}

impl PruneState {
    /// All-keep masks for every dense layer of `model`.
    pub fn new(model: &ModelGraph) -> Self {
        Self {
            masks: model
                .dense_layers()
                .map(|n| (n.name.clone(), vec![true; n.param("weight").unwrap().len()]))
                .collect(),
            initial_weights: model.clone(),
            history: Vec::new(),
        }
    }

    pub fn total_weights(&self) -> usize {
        self.masks.values().map(Vec::len).sum()
    }

    pub fn pruned_count(&self) -> usize {
        self.masks.values().flatten().filter(|k| !**k).count()
    }

    pub fn pruned_fraction(&self) -> f64 {
        let total = self.total_weights();
        if total == 0 {
            0.0
        } else {
            self.pruned_count() as f64 / total as f64
        }
    }

    pub fn layer_fractions(&self) -> BTreeMap<String, f64> {
        self.masks
            .iter()
            .map(|(k, m)| (k.clone(), m.iter().filter(|v| !**v).count() as f64 / m.len() as f64))
            .collect()
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("iteration,f_p,accuracy,auc,bops\n");
        for h in &self.history {
            let _ = writeln!(s, "{},{},{},{},{}", h.iteration, h.pruned_fraction, h.accuracy, h.auc, h.bops);
        }
        s
    }
}

fn target_count(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64).round() as usize).min(total)
}

/// Prunes the lowest-ranked surviving weights until the pruned fraction
/// reaches `fraction`. Weights rank by `|w| / max|w|` of their layer
/// (0 for an all-zero layer), ties broken by layer order then flat index.
pub fn rank_and_mask(model: &ModelGraph, state: &PruneState, fraction: f64, per_layer: bool) -> Result<PruneState, PruneError> {
    let current = state.pruned_fraction();
    if !(0.0..=1.0).contains(&fraction) {
        return Err(PruneError::Schedule(format!("fraction {fraction} outside [0, 1]")));
    }
    let mut next = state.clone();
    // (ratio, layer order, flat index) per survivor.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    let layers: Vec<&str> = model.ordered_nodes()?.into_iter().filter(|n| n.kind == LayerKind::Dense).map(|n| n.name.as_str()).collect();
    for (li, name) in layers.iter().enumerate() {
        let w = model.node(name).unwrap().param("weight").unwrap().data();
        let mask = state.masks.get(*name).ok_or_else(|| PruneError::Schedule(format!("no mask for `{name}`")))?;
        let max = w.iter().zip(mask).filter(|(_, k)| **k).fold(0.0f64, |m, (v, _)| m.max(v.abs()));
        for (j, (v, keep)) in w.iter().zip(mask).enumerate() {
            if *keep {
                candidates.push((if max > 0.0 { v.abs() / max } else { 0.0 }, li, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    if per_layer {
        for (li, name) in layers.iter().enumerate() {
            let mask = next.masks.get_mut(*name).unwrap();
            let pruned = mask.iter().filter(|k| !**k).count();
            let want = target_count(fraction, mask.len());
            if want < pruned {
                return Err(PruneError::Regression { requested: fraction, current });
            }
            for &(_, _, j) in candidates.iter().filter(|c| c.1 == li).take(want - pruned) {
                mask[j] = false;
            }
        }
    } else {
        let pruned = state.pruned_count();
        let want = target_count(fraction, state.total_weights());
        if want < pruned {
            return Err(PruneError::Regression { requested: fraction, current });
        }
        let k = want - pruned;
        if k > 0 && candidates.is_empty() {
            return Err(PruneError::NoSurvivors);
        }
        for &(_, li, j) in candidates.iter().take(k) {
            next.masks.get_mut(layers[li]).unwrap()[j] = false;
        }
    }
    Ok(next)
}

/// `initial` with masked weights set to zero.
pub fn rewind(initial: &ModelGraph, masks: &Masks) -> ModelGraph {
    let mut g = initial.clone();
    apply_masks(&mut g, masks);
    g
}

/// Zeroes masked weights in place.
pub fn apply_masks(graph: &mut ModelGraph, masks: &Masks) {
    for (name, mask) in masks {
        if let Some(node) = graph.node_mut(name) {
            let w = node.params.get_mut("weight").expect("dense weight");
            for (v, keep) in w.data_mut().iter_mut().zip(mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Observation points of [`prune_iterative_with`].
#[derive(Debug)]
pub enum PruneEvent<'a> {
    Masked { iteration: usize, state: &'a PruneState },
    Rewound { iteration: usize, model: &'a ModelGraph, state: &'a PruneState },
    Retrained { iteration: usize, model: &'a ModelGraph, entry: &'a HistoryEntry },
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub model: ModelGraph,
    pub state: PruneState,
}

pub fn prune_iterative(
    model: &ModelGraph,
    train: &Dataset,
    eval: &Dataset,
    schedule: &PruneSchedule,
    cfg: &TrainingConfig,
) -> Result<PruneOutcome, PruneError> {
    prune_iterative_with(model, train, eval, schedule, cfg, &mut |_| {})
}

/// Prunes `model` in steps of `schedule.increment` up to the target,
/// retraining after each step. `model` is the rewind snapshot.
pub fn prune_iterative_with(
    model: &ModelGraph,
    train: &Dataset,
    eval: &Dataset,
    schedule: &PruneSchedule,
    cfg: &TrainingConfig,
    observer: &mut dyn FnMut(PruneEvent<'_>),
) -> Result<PruneOutcome, PruneError> {
    schedule.validate()?;
    let mut state = PruneState::new(model);
    if schedule.target_fraction == 0.0 {
        return Ok(PruneOutcome { model: model.clone(), state });
    }
    let mut retrain_cfg = cfg.clone();
    retrain_cfg.epochs = schedule.retrain_epochs;
    match schedule.method {
        PruneMethod::Qap => trainer::check_quantizers(model, &retrain_cfg)?,
        PruneMethod::L1Retrain | PruneMethod::LtRewind => retrain_cfg.quantizers.clear(),
    }
    let mut current = model.clone();
    let mut iteration = 0;
    loop {
        iteration += 1;
        let fraction = (iteration as f64 * schedule.increment).min(schedule.target_fraction);
        state = rank_and_mask(&current, &state, fraction, schedule.per_layer)?;
        observer(PruneEvent::Masked { iteration, state: &state });
        if schedule.method == PruneMethod::L1Retrain {
            apply_masks(&mut current, &state.masks);
        } else {
            current = rewind(&state.initial_weights, &state.masks);
            observer(PruneEvent::Rewound { iteration, model: &current, state: &state });
        }
        // Seeds differ per iteration but stay a pure function of the config.
        retrain_cfg.seed = cfg.seed.wrapping_add(iteration as u64);
        current = train_masked(&current, train, &retrain_cfg, &state.masks)?.model;
        let metrics = evaluate(&current, eval, schedule.arithmetic)?;
        let entry = HistoryEntry {
            iteration,
            pruned_fraction: state.pruned_fraction(),
            layer_fractions: state.layer_fractions(),
            accuracy: metrics.accuracy,
            auc: metrics.mean_auc,
            bops: model_bops(&current)?,
        };
        log::info!("prune iteration {iteration}: f_p {:.3} accuracy {:.4}", entry.pruned_fraction, entry.accuracy);
        observer(PruneEvent::Retrained { iteration, model: &current, entry: &entry });
        state.history.push(entry);
        if fraction >= schedule.target_fraction - 1e-12 {
            break;
        }
    }
    Ok(PruneOutcome { model: current, state })
}

/// A tensor of keep flags as 0/1 values shaped like the layer weight.
pub fn mask_tensor(model: &ModelGraph, masks: &Masks, layer: &str) -> Option<Tensor> {
    let (rows, cols) = model.node(layer)?.param("weight")?.dims2()?;
    let m = masks.get(layer)?;
    Some(Tensor::matrix(rows, cols, m.iter().map(|k| if *k { 1.0 } else { 0.0 }).collect()))
}
