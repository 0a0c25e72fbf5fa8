// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Positional arguments filter criteria by number or
//! name substring.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use fixflow::codegen::{emit_project, CodegenConfig};
use fixflow::estimator::{dsp_per_multiply, estimate_model, reuse_sweep, EstimatorConfig};
use fixflow::fixed_point::{decode_binary, encode_binary, xnor_product, Fixed, FixedSpec};
use fixflow::kernels::{compress_coo, dense_mv, forward_real, sparse_mv_coo, CompiledModel, DenseWeights};
use fixflow::model_ir::{LayerKind, LayerNode, ModelGraph, PrecisionSet, Tensor};
use fixflow::passes::{constant_fold, fuse_batchnorm_into_binary_tanh, fuse_batchnorm_into_dense};
use fixflow::pruning::{architecture_bops, compute_bops, prune_iterative_with, PruneEvent, PruneMethod, PruneSchedule};
use fixflow::scan::{profiled_quantizers, scan, ScanConfig};
use fixflow::trainer::{
    evaluate, mlp, synthetic_jet, train, train_qat, Arithmetic, Dataset, Network, SyntheticConfig, TrainingConfig,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    run: fn(&Jet) -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- shared jet-task setup ----

struct Jet {
    train: Dataset,
    test: Dataset,
    init: ModelGraph,
    cfg: TrainingConfig,
    float: OnceLock<ModelGraph>,
}

impl Jet {
    fn new() -> Self {
        let data = synthetic_jet(&SyntheticConfig::default());
        let (train, test) = data.split(0.75, 1);
        Self {
            train,
            test,
            init: mlp("jet", 16, &[64, 32, 32], 5, true, 3),
            cfg: TrainingConfig {
                seed: 1,
                ..TrainingConfig::default()
            },
            float: OnceLock::new(),
        }
    }

    fn float(&self) -> &ModelGraph {
        self.float
            .get_or_init(|| train(&self.init, &self.train, &self.cfg).expect("float training").model)
    }
}

fn input_spec() -> FixedSpec {
    spec(16, 6)
}

fn wide_spec() -> FixedSpec {
    spec(32, 16)
}

// ---- criteria ----

fn oracle_equivalence(_: &Jet) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let evaluations = 10_000;
    let mut outputs = 0;
    for k in 0..evaluations {
        let n_in = rng.gen_range(1..=8);
        let n_out = rng.gen_range(1..=4);
        let p = PrecisionSet {
            weight: random_spec(&mut rng, 4..=32, true),
            bias: random_spec(&mut rng, 4..=32, true),
            accumulator: random_spec(&mut rng, 4..=32, true),
            result: random_spec(&mut rng, 4..=32, true),
        };
        let xs = random_spec(&mut rng, 4..=32, true);
        let w: Vec<_> = (0..n_in * n_out)
            .map(|_| if rng.gen_bool(0.1) { Fixed::zero(p.weight) } else { random_fixed(&mut rng, p.weight) })
            .collect();
        let b: Vec<_> = (0..n_out).map(|_| random_fixed(&mut rng, p.bias)).collect();
        let x: Vec<_> = (0..n_in).map(|_| random_fixed(&mut rng, xs)).collect();
        let weights = DenseWeights {
            n_in,
            n_out,
            values: w.clone(),
        };
        let got: Vec<i64> = dense_mv(&weights, &b, &x, &p)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|v| v.raw())
            .collect();
        let want = dense_oracle(&w, n_in, &b, &x, &p);
        ensure(got == want, || {
            format!(
                "evaluation {k}: kernel {got:?} vs oracle {want:?} (w {} b {} acc {} res {} x {})",
                p.weight, p.bias, p.accumulator, p.result, xs
            )
        })?;
        outputs += n_out;
    }
    Ok(format!("{evaluations} dense evaluations, {outputs} outputs bit-exact"))
}

fn dsp_rule(_: &Jet) -> Outcome {
    let t = EstimatorConfig::default().lut_threshold;
    ensure(dsp_per_multiply(25, 18, t) == 1, || "dsp(25,18) != 1".into())?;
    ensure(dsp_per_multiply(25, 19, t) == 2, || format!("dsp(25,19) = {}", dsp_per_multiply(25, 19, t)))?;
    for a in 1..=32 {
        for b in 1..=32 {
            let d = dsp_per_multiply(a, b, t);
            ensure(d == dsp_per_multiply(b, a, t), || format!("dsp({a},{b}) not symmetric"))?;
            if a < 32 {
                ensure(dsp_per_multiply(a + 1, b, t) >= d, || format!("dsp decreases from ({a},{b}) to ({},{b})", a + 1))?;
            }
            if b < 32 {
                ensure(dsp_per_multiply(a, b + 1, t) >= d, || format!("dsp decreases from ({a},{b}) to ({a},{})", b + 1))?;
            }
        }
    }
    Ok("dsp(25,18)=1, dsp(25,19)=2, monotone and symmetric on 1..32 x 1..32".into())
}

fn mnist_model() -> ModelGraph {
    let w1: Vec<f64> = (0..784 * 16).map(|i| ((i * 37 % 101) as f64 - 50.5) / 100.0).collect();
    let w2: Vec<f64> = (0..16 * 10).map(|i| ((i * 13 % 29) as f64 - 14.5) / 20.0).collect();
    ModelGraph::chain(
        "mnist",
        784,
        input_spec(),
        vec![
            LayerNode::dense("dense_1", Tensor::matrix(16, 784, w1), Tensor::vector(vec![0.0; 16])),
            LayerNode::new("relu_1", LayerKind::Relu),
            LayerNode::dense("dense_2", Tensor::matrix(10, 16, w2), Tensor::vector(vec![0.0; 10])),
            LayerNode::new("softmax", LayerKind::Softmax),
        ],
    )
}

fn reuse_model(_: &Jet) -> Outcome {
    let cfg = EstimatorConfig {
        clock_mhz: 100.0,
        ..EstimatorConfig::default()
    };
    let model = mnist_model();
    let reuses = [14, 28, 98, 784, 12544];
    let rows = reuse_sweep(&model, &reuses, &cfg).map_err(|e| e.to_string())?;
    for r in &rows {
        ensure(r.multiplications == 12_704, || format!("R={}: {} multiplications", r.reuse, r.multiplications))?;
        ensure(r.ii_cycles == r.reuse as u64, || format!("R={}: II {}", r.reuse, r.ii_cycles))?;
    }
    ensure(rows[0].ii_ns == 140.0, || format!("II at R=14 is {} ns", rows[0].ii_ns))?;
    ensure(rows[4].ii_ns == 125_440.0, || format!("II at R=12544 is {} ns", rows[4].ii_ns))?;
    let grid: Vec<u32> = (1..=12544).filter(|r| 12544 % r == 0).collect();
    let dense = reuse_sweep(&model, &grid, &cfg).map_err(|e| e.to_string())?;
    for w in dense.windows(2) {
        ensure(w[1].dsp <= w[0].dsp, || format!("DSP rises from {} at R={} to {} at R={}", w[0].dsp, w[0].reuse, w[1].dsp, w[1].reuse))?;
    }
    Ok(format!(
        "12704 multiplications, II=R, 140 ns..{} ms at 100 MHz, DSP {}..{} non-increasing over {} reuse factors",
        rows[4].ii_ns / 1e6,
        dense[0].dsp,
        dense.last().unwrap().dsp,
        grid.len()
    ))
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

fn bops_oracle(n: usize, m: usize, bw: u32, ba: u32, fp: &BigRational, log2n: &BigRational) -> BigRational {
    let int = |v: u64| BigRational::from_integer(BigInt::from(v));
    let one = int(1);
    int((m * n) as u64) * ((one - fp) * int(ba as u64) * int(bw as u64) + int(ba as u64) + int(bw as u64) + log2n)
}

fn bops(_: &Jet) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..1000 {
        let e = rng.gen_range(0..=12u32);
        let n = 1usize << e;
        let m = rng.gen_range(1..=1024);
        let (bw, ba) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
        let fp_num = rng.gen_range(0..=1024u64);
        let fp = fp_num as f64 / 1024.0;
        let got = compute_bops(n, m, bw, ba, fp);
        let want = bops_oracle(n, m, bw, ba, &BigRational::new(BigInt::from(fp_num), BigInt::from(1024)), &BigRational::from_integer(BigInt::from(e)));
        ensure(rational(got) == want, || format!("tuple {k} ({n},{m},{bw},{ba},{fp}): {got} vs {want}"))?;
    }
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let n = rng.gen_range(1..=4096);
        let m = rng.gen_range(1..=4096);
        let (bw, ba) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
        let fp: f64 = rng.gen_range(0.0..=1.0);
        let got = compute_bops(n, m, bw, ba, fp);
        let want = bops_oracle(n, m, bw, ba, &rational(fp), &rational((n as f64).log2()));
        let err = ((rational(got) - &want) / &want).to_f64_lossy().abs();
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("tuple {k} ({n},{m},{bw},{ba},{fp}): relative error {err:e}"))?;
    }
    let widths = [16, 64, 32, 32, 5];
    let ratio = architecture_bops(&widths, 32, 32, 0.0) / architecture_bops(&widths, 6, 6, 0.8);
    ensure((40.0..=55.0).contains(&ratio), || format!("jet BOPs ratio {ratio:.2} outside [40, 55]"))?;
    Ok(format!(
        "1000 dyadic tuples exact, 1000 general tuples within {worst:.1e}, jet ratio {ratio:.2}"
    ))
}

trait LossyF64 {
    fn to_f64_lossy(&self) -> f64;
}

impl LossyF64 for BigRational {
    fn to_f64_lossy(&self) -> f64 {
        use num_traits::ToPrimitive;
        self.to_f64().unwrap_or(f64::INFINITY)
    }
}

fn qat_vs_ptq(jet: &Jet) -> Outcome {
    let cfg = ScanConfig {
        bits: (3..=8).collect(),
        training: jet.cfg.clone(),
        ..ScanConfig::default()
    };
    let r = scan(&jet.init, &jet.train, &jet.test, &cfg).map_err(|e| e.to_string())?;
    let at = |b: u32| r.point(b).copied().ok_or(format!("no point at {b} bits"));
    let p6 = at(6)?;
    ensure(p6.qat_relative >= 0.95, || format!("QAT at 6 bits is {:.4} of float", p6.qat_relative))?;
    for p in r.points.iter().filter(|p| p.bits <= 8) {
        ensure(p.qat_relative >= p.ptq_relative - 0.01, || {
            format!("{} bits: QAT {:.4} < PTQ {:.4} - 0.01", p.bits, p.qat_relative, p.ptq_relative)
        })?;
    }
    let p4 = at(4)?;
    ensure(p4.ptq_relative <= 0.90, || format!("PTQ at 4 bits is {:.4} of float", p4.ptq_relative))?;
    let curve: Vec<String> = r
        .points
        .iter()
        .map(|p| format!("{}:{:.3}/{:.3}", p.bits, p.qat_relative, p.ptq_relative))
        .collect();
    Ok(format!("float {:.4}; bits:QAT/PTQ relative {}", r.float_accuracy, curve.join(" ")))
}

fn qap(jet: &Jet) -> Outcome {
    let wide = wide_spec();
    let qcfg = TrainingConfig {
        quantizers: profiled_quantizers(jet.float(), 6).map_err(|e| e.to_string())?,
        ..jet.cfg.clone()
    };
    let qat = train_qat(&jet.init, &jet.train, &qcfg)
        .map_err(|e| e.to_string())?
        .model
        .with_datapath(input_spec(), wide, wide);
    let base = evaluate(&qat, &jet.test, Arithmetic::Fixed).map_err(|e| e.to_string())?.accuracy;

    let init = jet.init.with_datapath(input_spec(), wide, wide);
    let sched = PruneSchedule {
        method: PruneMethod::Qap,
        arithmetic: Arithmetic::Fixed,
        increment: 0.1,
        target_fraction: 0.8,
        ..PruneSchedule::default()
    };
    let total: usize = init.dense_layers().map(|n| n.param("weight").unwrap().len()).sum();
    let tol = 1.0 / total as f64;
    let mut violations = Vec::new();
    let mut previous: Option<BTreeMap<String, Vec<bool>>> = None;
    let mut rewinds = 0;
    let mut observer = |event: PruneEvent<'_>| match event {
        PruneEvent::Masked { iteration, state } => {
            if let Some(prev) = &previous {
                for (layer, mask) in &state.masks {
                    if prev[layer].iter().zip(mask).any(|(was, now)| !*was && *now) {
                        violations.push(format!("iteration {iteration}: `{layer}` revived a pruned weight"));
                    }
                }
            }
            let want = (iteration as f64 * sched.increment).min(sched.target_fraction);
            if (state.pruned_fraction() - want).abs() > tol + 1e-12 {
                violations.push(format!("iteration {iteration}: pruned {:.4}, expected {want:.2}", state.pruned_fraction()));
            }
            previous = Some(state.masks.clone());
        }
        PruneEvent::Rewound { iteration, model, state } => {
            rewinds += 1;
            for (node, initial) in model.nodes.iter().zip(&state.initial_weights.nodes) {
                for (key, t) in &node.params {
                    let t0 = &initial.params[key];
                    let mask = state.masks.get(&node.name).filter(|_| key == "weight");
                    for (j, (v, v0)) in t.data().iter().zip(t0.data()).enumerate() {
                        let want = match mask {
                            Some(m) if !m[j] => 0.0,
                            _ => *v0,
                        };
                        if v.to_bits() != want.to_bits() {
                            violations.push(format!("iteration {iteration}: `{}`.{key}[{j}] = {v}, rewind expects {want}", node.name));
                            return;
                        }
                    }
                }
            }
        }
        PruneEvent::Retrained { iteration, model, .. } => {
            let masks = previous.as_ref().expect("masked before retrain");
            for (layer, mask) in masks {
                let w = model.node(layer).unwrap().param("weight").unwrap().data();
                if w.iter().zip(mask).any(|(v, keep)| !keep && *v != 0.0) {
                    violations.push(format!("iteration {iteration}: masked weight of `{layer}` nonzero after retraining"));
                }
            }
        }
    };
    let out = prune_iterative_with(&init, &jet.train, &jet.test, &sched, &qcfg, &mut observer).map_err(|e| e.to_string())?;
    ensure(violations.is_empty(), || violations.join("; "))?;
    let last = out.state.history.last().ok_or("empty history")?;
    ensure(rewinds == out.state.history.len(), || "missing rewind events".into())?;
    ensure((out.state.pruned_fraction() - 0.8).abs() <= tol, || format!("final f_p {:.4}", out.state.pruned_fraction()))?;
    ensure(last.accuracy >= base - 0.02, || format!("QAP accuracy {:.4} vs 6-bit QAT {base:.4}", last.accuracy))?;
    Ok(format!(
        "6-bit QAT {base:.4}, QAP at f_p {:.3} {:.4} (delta {:+.4}) over {} iterations; masks monotone, rewinds exact",
        out.state.pruned_fraction(),
        last.accuracy,
        last.accuracy - base,
        out.state.history.len()
    ))
}

fn inf_norm_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    diff / scale
}

fn semantic_preservation(_: &Jet) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Batch-norm into dense, in binary64.
    let mut worst = 0.0f64;
    for k in 0..200 {
        let (n_in, h, n_out) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=4));
        let g = ModelGraph::chain(
            "bn_dense",
            n_in,
            input_spec(),
            vec![
                random_dense(&mut rng, "d1", n_in, h, 1.5, 0.1),
                random_batch_norm(&mut rng, "bn", h),
                LayerNode::new("r", LayerKind::Relu),
                random_dense(&mut rng, "d2", h, n_out, 1.5, 0.1),
            ],
        );
        let (f, report) = fuse_batchnorm_into_dense(&g).map_err(|e| e.to_string())?;
        ensure(report.rewrites.len() == 1 && f.nodes.len() + 1 == g.nodes.len(), || format!("model {k}: BN not fused"))?;
        for _ in 0..10 {
            let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let a = forward_real(&g, &x).map_err(|e| e.to_string())?;
            let b = forward_real(&f, &x).map_err(|e| e.to_string())?;
            let r = inf_norm_rel(&a, &b);
            worst = worst.max(r);
            ensure(r <= 1e-6, || format!("model {k}: dense fusion relative error {r:e}"))?;
        }
    }

    // Batch-norm into binary tanh, in binary64.
    for k in 0..200 {
        let (n_in, h) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let mut bn = random_batch_norm(&mut rng, "bn", h);
        if k % 4 == 0 {
            bn.params.get_mut("gamma").unwrap().data_mut()[0] = 0.0;
        }
        let g = ModelGraph::chain(
            "bn_binary",
            n_in,
            input_spec(),
            vec![
                random_dense(&mut rng, "d1", n_in, h, 1.5, 0.1),
                bn,
                LayerNode::new("t", LayerKind::BinaryTanh),
                random_dense(&mut rng, "d2", h, 3, 1.5, 0.1),
            ],
        );
        let (f, report) = fuse_batchnorm_into_binary_tanh(&g).map_err(|e| e.to_string())?;
        ensure(report.rewrites.len() == 1, || format!("model {k}: BN not fused into threshold"))?;
        for _ in 0..10 {
            let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let a = forward_real(&g, &x).map_err(|e| e.to_string())?;
            let b = forward_real(&f, &x).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("model {k}: threshold fusion changed {a:?} to {b:?}"))?;
        }
    }

    // Constant folding, bit-exact in fixed point.
    let mut folds = 0;
    for k in 0..200 {
        let n = rng.gen_range(1..=6);
        let h = rng.gen_range(1..=6);
        let value: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let c = LayerNode::new("c", LayerKind::Constant)
            .with_param("value", Tensor::vector(value))
            .with_precision(PrecisionSet::uniform(random_spec(&mut rng, 6..=20, false)));
        let p = PrecisionSet {
            weight: random_spec(&mut rng, 4..=16, false),
            bias: random_spec(&mut rng, 4..=16, false),
            accumulator: random_spec(&mut rng, 8..=32, false),
            result: random_spec(&mut rng, 6..=20, true),
        };
        let d1 = random_dense(&mut rng, "d1", n, h, 2.0, 0.2).with_precision(p);
        let r = LayerNode::new("r", LayerKind::Relu).with_precision(PrecisionSet::uniform(random_spec(&mut rng, 6..=20, true)));
        let d2 = random_dense(&mut rng, "d2", h, 2, 2.0, 0.2).with_precision(PrecisionSet::uniform(spec(16, 6)));
        let g = ModelGraph::chain("fold", 2, input_spec(), vec![c, d1, r, d2]);
        let (f, report) = constant_fold(&g).map_err(|e| e.to_string())?;
        folds += report.rewrites.len();
        let before = CompiledModel::compile(&g).map_err(|e| e.to_string())?;
        let after = CompiledModel::compile(&f).map_err(|e| e.to_string())?;
        let x = [rng.gen_range(-1000..1000), rng.gen_range(-1000..1000)];
        let a: Vec<i64> = before.run_raw(&x, false).map_err(|e| e.to_string())?.fixed_output.iter().map(|v| v.raw()).collect();
        let b: Vec<i64> = after.run_raw(&x, false).map_err(|e| e.to_string())?.fixed_output.iter().map(|v| v.raw()).collect();
        ensure(a == b, || format!("model {k}: folding changed {a:?} to {b:?}"))?;
    }
    ensure(folds >= 200, || format!("only {folds} folds over 200 models"))?;

    // COO against dense, sparsity 0 to 100 %.
    let mut coo_cases = 0;
    for step in 0..=10 {
        let sparsity = step as f64 / 10.0;
        for k in 0..50 {
            let (n_in, n_out) = (rng.gen_range(1..=16), rng.gen_range(1..=8));
            let p = PrecisionSet {
                weight: random_spec(&mut rng, 4..=16, true),
                bias: random_spec(&mut rng, 4..=16, true),
                accumulator: random_spec(&mut rng, 4..=32, true),
                result: random_spec(&mut rng, 4..=24, true),
            };
            let xs = random_spec(&mut rng, 4..=16, true);
            let values = (0..n_in * n_out)
                .map(|_| {
                    if rng.gen_bool(sparsity) {
                        Fixed::zero(p.weight)
                    } else {
                        random_fixed(&mut rng, p.weight)
                    }
                })
                .collect();
            let dense = DenseWeights { n_in, n_out, values };
            let coo = compress_coo(&dense);
            ensure(coo.decompress(p.weight) == dense, || format!("sparsity {sparsity} case {k}: decompress differs"))?;
            let b: Vec<_> = (0..n_out).map(|_| random_fixed(&mut rng, p.bias)).collect();
            let x: Vec<_> = (0..n_in).map(|_| random_fixed(&mut rng, xs)).collect();
            let a = dense_mv(&dense, &b, &x, &p).map_err(|e| e.to_string())?;
            let s = sparse_mv_coo(&coo, &b, &x, &p).map_err(|e| e.to_string())?;
            ensure(a == s, || format!("sparsity {sparsity} case {k}: COO {s:?} vs dense {a:?}"))?;
            coo_cases += 1;
        }
    }

    // XNOR truth table.
    for a in [-1i8, 1] {
        for b in [-1i8, 1] {
            let got = decode_binary(xnor_product(encode_binary(a), encode_binary(b)));
            ensure(got == a * b, || format!("xnor({a},{b}) decodes to {got}"))?;
        }
    }
    Ok(format!(
        "BN->dense worst {worst:.1e}, BN->threshold exact, {folds} constant folds bit-exact, {coo_cases} COO cases bit-exact, XNOR table exact"
    ))
}

fn gradient_check(_: &Jet) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (h, l1) = (1e-6, 1e-3);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for k in 0..20 {
        let n_in = rng.gen_range(2..=5);
        let hidden = rng.gen_range(2..=6);
        let classes = rng.gen_range(2..=4);
        let mut layers = vec![random_dense(&mut rng, "d1", n_in, hidden, 1.0, 0.0)];
        if rng.gen_bool(0.5) {
            let mut bn = random_batch_norm(&mut rng, "bn", hidden);
            bn.params.get_mut("gamma").unwrap().data_mut().iter_mut().for_each(|g| *g = g.abs());
            layers.push(bn);
        }
        layers.push(LayerNode::new("r", LayerKind::Relu));
        layers.push(random_dense(&mut rng, "d2", hidden, classes, 1.0, 0.0));
        layers.push(LayerNode::new("s", LayerKind::Softmax));
        let g = ModelGraph::chain("grad", n_in, input_spec(), layers);
        let mut net = Network::from_graph(&g, &BTreeMap::new(), None).map_err(|e| e.to_string())?;
        let batch = 6;
        let x: Vec<f64> = (0..batch * n_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
        let (_, grad) = net.loss_and_gradient(&x, &y, l1, true);
        for j in 0..net.params().len() {
            let p = net.params()[j];
            net.params_mut()[j] = p + h;
            let up = net.loss(&x, &y, l1, true);
            net.params_mut()[j] = p - h;
            let down = net.loss(&x, &y, l1, true);
            net.params_mut()[j] = p;
            let fd = (up - down) / (2.0 * h);
            // Rounding error of the difference quotient itself.
            let noise = 8.0 * f64::EPSILON * up.abs().max(down.abs()) / (2.0 * h);
            let err = (fd - grad[j]).abs();
            let scale = fd.abs().max(grad[j].abs());
            ensure(err <= 1e-5 * scale || err <= noise, || {
                format!("model {k} parameter {j}: analytic {} vs numeric {fd} (rel {:e})", grad[j], err / scale)
            })?;
            if scale >= 1e-4 {
                worst = worst.max(err / scale);
            }
            checked += 1;
        }
    }
    Ok(format!("20 models, {checked} parameters, worst relative error {worst:.1e} where |gradient| >= 1e-4"))
}

fn codegen_determinism(_: &Jet) -> Outcome {
    let tree = emit_project(&reference_model(), &CodegenConfig::default()).map_err(|e| e.to_string())?;
    let diffs = golden_differences(&tree);
    ensure(diffs.is_empty(), || diffs.join("; "))?;
    let again = emit_project(&reference_model(), &CodegenConfig { timestamp: Some(tree.manifest.generated_at_unix), ..CodegenConfig::default() })
        .map_err(|e| e.to_string())?;
    ensure(again == tree, || "second emission differs".into())?;
    let Some(cxx) = cxx_compiler() else {
        return Ok(format!("golden tree equal ({} files); no C++ toolchain, compile check skipped", tree.files.len()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let models = codegen_coverage_models(&mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for m in &models {
        compile_and_compare(&cxx, m, 100, &mut rng)?;
    }
    Ok(format!(
        "golden tree equal ({} files); {} projects compiled with {cxx}, 100 inputs each bit-match the emulator",
        tree.files.len(),
        models.len()
    ))
}

fn dsp_ordering(jet: &Jet) -> Outcome {
    let cfg = EstimatorConfig::default();
    let dsp_at = |bits: u32| -> Result<u64, String> {
        let s = spec(bits, 6);
        let mut g = jet.float().with_datapath(s, s, s);
        for n in g.nodes.iter_mut().filter(|n| n.kind == LayerKind::Dense) {
            n.precision.weight = s;
            n.precision.bias = s;
        }
        Ok(estimate_model(&g, None, &cfg).map_err(|e| e.to_string())?.resources.dsp_total)
    };
    let (d16, d14, d6) = (dsp_at(16)?, dsp_at(14)?, dsp_at(6)?);
    ensure(d16 > d14, || format!("DSP(16) {d16} <= DSP(14) {d14}"))?;
    ensure(d14 >= 10 * d6.max(1), || format!("DSP(14) {d14} not far above DSP(6) {d6}"))?;
    Ok(format!("DSP(16) {d16} > DSP(14) {d14} >> DSP(6) {d6}"))
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "fixed-point oracle equivalence", run: oracle_equivalence },
    Criterion { id: 2, name: "DSP rule", run: dsp_rule },
    Criterion { id: 3, name: "reuse-factor model", run: reuse_model },
    Criterion { id: 4, name: "BOPs", run: bops },
    Criterion { id: 5, name: "QAT vs PTQ trend", run: qat_vs_ptq },
    Criterion { id: 6, name: "QAP trend", run: qap },
    Criterion { id: 7, name: "semantic preservation", run: semantic_preservation },
    Criterion { id: 8, name: "gradient check", run: gradient_check },
    Criterion { id: 9, name: "codegen determinism", run: codegen_determinism },
    Criterion { id: 10, name: "DSP ordering", run: dsp_ordering },
];

fn selected(c: &Criterion, filters: &[String]) -> bool {
    filters.is_empty()
        || filters.iter().any(|f| {
            f.parse::<u32>().is_ok_and(|n| n == c.id) || c.name.contains(f.as_str()) || format!("criterion_{}", c.id) == *f
        })
}

fn main() {
    let mut filters = Vec::new();
    let mut list = false;
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--list" => list = true,
            "--format" | "--test-threads" | "--skip" | "--logfile" | "--color" | "-Z" => {
                args.next();
            }
            s if s.starts_with('-') => {}
            _ => filters.push(a),
        }
    }
    let chosen: Vec<&Criterion> = CRITERIA.iter().filter(|c| selected(c, &filters)).collect();
    if list {
        for c in &chosen {
            println!("criterion_{}: test", c.id);
        }
        return;
    }

    let jet = Jet::new();
    let mut failed = 0;
    let start = Instant::now();
    for c in &chosen {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| (c.run)(&jet)))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {}: {detail} ({secs:.1}s)", c.id, c.name),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {}: {detail} ({secs:.1}s)", c.id, c.name);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed ({:.1}s)",
        chosen.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}
