// SPDX-License-Identifier: Apache-2.0

//! Small-scale MLP training: backprop in binary64, SGD or Adam, L1
//! regularization, straight-through quantization and pruning masks.

mod dataset;
mod metrics;
mod network;
mod quantizer;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{self, CompiledModel, KernelError};
use crate::model_ir::{LayerKind, ModelError, ModelGraph};

pub use dataset::{synthetic_jet, Dataset, SyntheticConfig};
pub use metrics::{argmax, auc_rank, auc_trapezoid, classification_metrics, ClassMetrics, Evaluation};
pub use network::{cross_entropy, mlp, ForwardCache, Network};
pub use quantizer::{QuantMode, QuantizerSpec};

/// Keep-flags per dense layer name, aligned with the flattened weight.
pub type Masks = BTreeMap<String, Vec<bool>>;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("layer `{layer}` of kind {kind} is not trainable")]
    Unsupported { layer: String, kind: String },
    #[error("non-finite loss in epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("AUC undefined: dataset contains fewer than two classes")]
    SingleClass,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

fn default_momentum() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub l1_lambda: f64,
    #[serde(default)]
    pub seed: u64,
    /// Per dense layer name.
    #[serde(default)]
    pub quantizers: BTreeMap<String, QuantizerSpec>,
    /// Batch-norm moving-average momentum.
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            optimizer: Optimizer::adam(),
            epochs: 30,
            batch_size: 64,
            l1_lambda: 0.0,
            seed: 0,
            quantizers: BTreeMap::new(),
            bn_momentum: default_momentum(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.l1_lambda >= 0.0 && self.l1_lambda.is_finite()) {
            return bad("l1_lambda must be non-negative");
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must be in [0, 1)");
        }
        Ok(())
    }

    /// The same quantizer on every dense layer of `graph`.
    pub fn with_uniform_quantizer(mut self, graph: &ModelGraph, q: QuantizerSpec) -> Self {
        self.quantizers = graph.dense_layers().map(|n| (n.name.clone(), q)).collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Full-data loss and accuracy before training (epoch 0) and after every
/// epoch, in inference mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub records: Vec<EpochRecord>,
}

impl LossTrace {
    pub fn initial_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.loss, r.accuracy);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelGraph,
    pub trace: LossTrace,
}

/// Trains `model` from its current parameters. Quantizers listed in `cfg`
/// are applied in the forward pass.
pub fn train(model: &ModelGraph, data: &Dataset, cfg: &TrainingConfig) -> Result<TrainOutcome, TrainError> {
    fit(model, data, cfg, None)
}

/// Quantization-aware training; every dense layer needs a quantizer.
pub fn train_qat(model: &ModelGraph, data: &Dataset, cfg: &TrainingConfig) -> Result<TrainOutcome, TrainError> {
    check_quantizers(model, cfg)?;
    fit(model, data, cfg, None)
}

/// Training with fixed pruning masks, enforced in every forward pass and
/// after every update.
pub fn train_masked(
    model: &ModelGraph,
    data: &Dataset,
    cfg: &TrainingConfig,
    masks: &Masks,
) -> Result<TrainOutcome, TrainError> {
    fit(model, data, cfg, Some(masks))
}

pub(crate) fn check_quantizers(model: &ModelGraph, cfg: &TrainingConfig) -> Result<(), TrainError> {
    if let Some(n) = model.dense_layers().find(|n| !cfg.quantizers.contains_key(&n.name)) {
        return Err(TrainError::Config(format!("dense layer `{}` has no quantizer", n.name)));
    }
    Ok(())
}

fn record(net: &Network, data: &Dataset, l1: f64, epoch: usize) -> Result<EpochRecord, TrainError> {
    let (logits, _) = net.forward(&data.features, data.len(), false);
    let (ce, _) = cross_entropy(&logits, &data.labels, net.output_width());
    let loss = ce + l1 * net.l1_norm();
    if !loss.is_finite() {
        return Err(TrainError::NonFinite { epoch });
    }
    let k = net.output_width();
    let correct = (0..data.len())
        .filter(|&s| argmax(&logits[s * k..(s + 1) * k]) == data.labels[s])
        .count();
    Ok(EpochRecord {
        epoch,
        loss,
        accuracy: correct as f64 / data.len() as f64,
    })
}

fn fit(
    model: &ModelGraph,
    data: &Dataset,
    cfg: &TrainingConfig,
    masks: Option<&Masks>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut net = Network::from_graph(model, &cfg.quantizers, masks)?;
    if data.is_empty() || data.width != net.input_width() {
        return Err(TrainError::Data(format!(
            "expected non-empty data of width {}, got {} rows of width {}",
            net.input_width(),
            data.len(),
            data.width
        )));
    }
    if data.class_count > net.output_width() {
        return Err(TrainError::Data(format!(
            "{} classes but the model has {} outputs",
            data.class_count,
            net.output_width()
        )));
    }
    let mut trace = LossTrace::default();
    trace.records.push(record(&net, data, cfg.l1_lambda, 0)?);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let n_params = net.params().len();
    let (mut m, mut v) = (vec![0.0; n_params], vec![0.0; n_params]);
    let mut step = 0i32;
    let mut xb = Vec::with_capacity(cfg.batch_size * data.width);
    let mut yb = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(data.row(i));
                yb.push(data.labels[i]);
            }
            let (logits, cache) = net.forward(&xb, yb.len(), true);
            let (ce, dlogits) = cross_entropy(&logits, &yb, net.output_width());
            if !ce.is_finite() {
                return Err(TrainError::NonFinite { epoch });
            }
            let mut grad = net.backward(&cache, &dlogits);
            if cfg.l1_lambda != 0.0 {
                let params = net.params();
                for r in net.weight_ranges() {
                    for j in r {
                        grad[j] += cfg.l1_lambda * network::sign(params[j]);
                    }
                }
            }
            net.update_running_stats(&cache, cfg.bn_momentum);
            step += 1;
            let lr = cfg.learning_rate;
            let params = net.params_mut();
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    for j in 0..n_params {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
                        params[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
            net.enforce_masks();
        }
        trace.records.push(record(&net, data, cfg.l1_lambda, epoch)?);
        log::debug!("epoch {epoch}: {:?}", trace.records.last());
    }
    Ok(TrainOutcome {
        model: net.to_graph(),
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arithmetic {
    /// Binary64 forward pass.
    Real,
    /// Bit-accurate emulation with each layer's precision.
    Fixed,
}

/// Per-sample class probabilities. A final softmax is applied when the
/// model does not end in one.
pub fn predict(model: &ModelGraph, data: &Dataset, arithmetic: Arithmetic) -> Result<Vec<Vec<f64>>, TrainError> {
    let ends_in_softmax = model.ordered_nodes()?.last().map(|n| n.kind) == Some(LayerKind::Softmax);
    let compiled = match arithmetic {
        Arithmetic::Fixed => Some(CompiledModel::compile(model)?),
        Arithmetic::Real => None,
    };
    (0..data.len())
        .map(|i| {
            let out = match &compiled {
                Some(c) => c.run(data.row(i), false)?.output,
                None => kernels::forward_real(model, data.row(i))?,
            };
            Ok(if ends_in_softmax { out } else { kernels::softmax(&out) })
        })
        .collect()
}

/// Accuracy and one-vs-rest metrics. Errors when fewer than two classes
/// occur in `data`, since AUC is then undefined.
pub fn evaluate(model: &ModelGraph, data: &Dataset, arithmetic: Arithmetic) -> Result<Evaluation, TrainError> {
    let present: std::collections::BTreeSet<usize> = data.labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(TrainError::SingleClass);
    }
    let scores = predict(model, data, arithmetic)?;
    Ok(classification_metrics(&scores, &data.labels, data.class_count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_point::FixedSpec;
    use crate::model_ir::{LayerNode, Tensor};
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Vec::new();
        let mut l = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -1.5 } else { 1.5 };
            f.push(centre + rng.gen_range(-1.0..1.0));
            f.push(rng.gen_range(-1.0..1.0));
            l.push(c);
        }
        Dataset::new(f, 2, l, 2).unwrap()
    }

    fn linear(seed: u64) -> ModelGraph {
        mlp("lin", 2, &[], 2, false, seed)
    }

    #[test]
    fn linear_separable_reaches_95() {
        let data = blobs(200, 1);
        let cfg = TrainingConfig {
            learning_rate: 0.05,
            optimizer: Optimizer::Sgd,
            epochs: 200,
            batch_size: 20,
            seed: 5,
            ..Default::default()
        };
        let out = train(&linear(2), &data, &cfg).unwrap();
        assert!(out.trace.final_loss() < out.trace.initial_loss());
        let acc = evaluate(&out.model, &data, Arithmetic::Real).unwrap().accuracy;
        assert!(acc >= 0.95, "{acc}");
    }

    #[test]
    fn deterministic_and_l1_shrinks() {
        let data = blobs(100, 3);
        let model = mlp("m", 2, &[8], 2, true, 4);
        let cfg = TrainingConfig {
            epochs: 5,
            batch_size: 10,
            learning_rate: 0.01,
            seed: 9,
            ..Default::default()
        };
        let a = train(&model, &data, &cfg).unwrap();
        let b = train(&model, &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);

        let heavy = TrainingConfig { l1_lambda: 10.0, epochs: 30, ..cfg };
        let c = train(&model, &data, &heavy).unwrap();
        let median = |g: &ModelGraph| {
            let mut w: Vec<f64> = g
                .dense_layers()
                .flat_map(|n| n.param("weight").unwrap().data().iter().map(|v| v.abs()))
                .collect();
            w.sort_by(f64::total_cmp);
            w[w.len() / 2]
        };
        assert!(median(&c.model) < median(&model));
    }

    #[test]
    fn binary_qat_forward_weights() {
        let data = blobs(60, 4);
        let model = linear(1);
        let cfg = TrainingConfig {
            epochs: 3,
            batch_size: 10,
            ..Default::default()
        }
        .with_uniform_quantizer(&model, QuantizerSpec::binary(0.5));
        let out = train_qat(&model, &data, &cfg).unwrap();
        for v in out.model.node("dense_1").unwrap().param("weight").unwrap().data() {
            assert!(*v == 0.5 || *v == -0.5);
        }
        assert!(train_qat(&model, &data, &TrainingConfig::default()).is_err());
    }

    #[test]
    fn masks_hold() {
        let data = blobs(60, 6);
        let model = linear(1);
        let masks: Masks = [("dense_1".to_string(), vec![true, false, false, true])].into();
        let out = train_masked(&model, &data, &TrainingConfig::default(), &masks).unwrap();
        let w = out.model.node("dense_1").unwrap().param("weight").unwrap().data();
        assert_eq!((w[1], w[2]), (0.0, 0.0));
        assert!(w[0] != 0.0);
    }

    #[test]
    fn single_class_is_an_error() {
        let data = Dataset::new(vec![0.0, 1.0, 2.0, 3.0], 2, vec![1, 1], 2).unwrap();
        assert!(matches!(
            evaluate(&linear(0), &data, Arithmetic::Real),
            Err(TrainError::SingleClass)
        ));
    }

    #[test]
    fn gradient_matches_finite_differences_with_batch_norm() {
        let model = ModelGraph::chain(
            "g",
            3,
            FixedSpec::default(),
            vec![
                LayerNode::dense("d1", Tensor::matrix(4, 3, (0..12).map(|k| (k as f64 * 0.37).sin()).collect()), Tensor::vector(vec![0.1, -0.2, 0.05, 0.0])),
                LayerNode::batch_norm("bn", vec![1.2, 0.7, -0.4, 1.0], vec![0.1, 0.0, 0.3, -0.2], vec![0.0; 4], vec![1.0; 4], 1e-3),
                LayerNode::new("r", LayerKind::Relu),
                LayerNode::dense("d2", Tensor::matrix(2, 4, (0..8).map(|k| (k as f64 * 0.91).cos()).collect()), Tensor::vector(vec![0.0, 0.1])),
                LayerNode::new("s", LayerKind::Softmax),
            ],
        );
        let mut net = Network::from_graph(&model, &BTreeMap::new(), None).unwrap();
        let x: Vec<f64> = (0..15).map(|k| (k as f64 * 1.3).sin() * 2.0).collect();
        let y = [0, 1, 1, 0, 1];
        let (_, grad) = net.loss_and_gradient(&x, &y, 1e-3, true);
        let h = 1e-6;
        for j in 0..net.params().len() {
            let p = net.params()[j];
            net.params_mut()[j] = p + h;
            let up = net.loss(&x, &y, 1e-3, true);
            net.params_mut()[j] = p - h;
            let down = net.loss(&x, &y, 1e-3, true);
            net.params_mut()[j] = p;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[j]).abs() / (fd.abs().max(grad[j].abs())).max(1e-6);
            assert!(rel < 1e-5, "param {j}: {fd} vs {}", grad[j]);
        }
    }

    #[test]
    fn trace_csv() {
        let t = LossTrace {
            records: vec![EpochRecord { epoch: 0, loss: 1.5, accuracy: 0.25 }],
        };
        assert_eq!(t.to_csv(), "epoch,loss,accuracy\n0,1.5,0.25\n");
    }
}
