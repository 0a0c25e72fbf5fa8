// SPDX-License-Identifier: Apache-2.0

//! Helpers shared by integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use fixflow::codegen::{emit_project, CodegenConfig, ProjectTree};
use fixflow::fixed_point::{Fixed, FixedSpec, Overflow, Rounding};
use fixflow::kernels::CompiledModel;
use fixflow::model_ir::{parse_model, LayerKind, LayerNode, ModelGraph, PrecisionSet, Tensor};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed};
use rand::Rng;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn spec(w: u32, i: i32) -> FixedSpec {
    FixedSpec::new(w, i).unwrap()
}

pub fn spec_with(w: u32, i: i32, signed: bool, rnd: bool, sat: bool) -> FixedSpec {
    FixedSpec::with_modes(
        w,
        i,
        signed,
        if rnd { Rounding::RoundHalfUp } else { Rounding::Truncate },
        if sat { Overflow::Saturate } else { Overflow::Wrap },
    )
    .unwrap()
}

/// A format with width in `widths`, random sign, rounding and overflow.
pub fn random_spec(rng: &mut impl Rng, widths: std::ops::RangeInclusive<u32>, allow_unsigned: bool) -> FixedSpec {
    let w = rng.gen_range(widths);
    let i = rng.gen_range(-(w as i32) / 2..=w as i32 + 2);
    let signed = !allow_unsigned || rng.gen_bool(0.75);
    spec_with(w, i, signed, rng.gen_bool(0.5), rng.gen_bool(0.5))
}

pub fn random_fixed(rng: &mut impl Rng, spec: FixedSpec) -> Fixed {
    Fixed::from_raw(rng.gen_range(spec.min_raw()..=spec.max_raw()), spec).unwrap()
}

// ---- arbitrary-precision reference arithmetic ----

pub fn pow2(e: i32) -> BigRational {
    let two = BigInt::from(2);
    if e >= 0 {
        BigRational::from_integer(two.pow(e as u32))
    } else {
        BigRational::new(BigInt::one(), two.pow((-e) as u32))
    }
}

pub fn to_rational(v: Fixed) -> BigRational {
    BigRational::from_integer(BigInt::from(v.raw())) * pow2(-v.spec().frac_bits())
}

/// Raw integer of `v` cast into `spec`: scale, round, then saturate or
/// reduce modulo `2^W`.
pub fn quantize_rational(v: &BigRational, spec: FixedSpec) -> i64 {
    let scaled = v * pow2(spec.frac_bits());
    let r = match spec.rounding() {
        Rounding::Truncate => scaled.floor().to_integer(),
        Rounding::RoundHalfUp => (scaled + BigRational::new(BigInt::one(), BigInt::from(2))).floor().to_integer(),
    };
    let lo = BigInt::from(spec.min_raw());
    let hi = BigInt::from(spec.max_raw());
    let fitted = if r >= lo && r <= hi {
        r
    } else if spec.overflow() == Overflow::Saturate {
        if r.is_negative() {
            lo
        } else {
            hi
        }
    } else {
        let m = BigInt::one() << spec.width();
        let mut k = (r - &lo) % &m;
        if k.is_negative() {
            k += &m;
        }
        k + lo
    };
    i64::try_from(fitted).expect("fits in i64")
}

/// Dense layer under the cast-point convention: bias cast into the
/// accumulator, each nonzero product cast and added in ascending input
/// order with the sum refitted, then one cast into the result format.
pub fn dense_oracle(w: &[Fixed], n_in: usize, b: &[Fixed], x: &[Fixed], p: &PrecisionSet) -> Vec<i64> {
    let acc_value = |raw: i64| BigRational::from_integer(BigInt::from(raw)) * pow2(-p.accumulator.frac_bits());
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let mut acc = quantize_rational(&to_rational(bias), p.accumulator);
            for (i, &xi) in x.iter().enumerate() {
                let wv = w[o * n_in + i];
                if wv.raw() == 0 {
                    continue;
                }
                let prod = quantize_rational(&(to_rational(wv) * to_rational(xi)), p.accumulator);
                let sum = acc_value(acc) + acc_value(prod);
                acc = quantize_rational(&sum, p.accumulator);
            }
            quantize_rational(&acc_value(acc), p.result)
        })
        .collect()
}

// ---- models ----

pub fn reference_model() -> ModelGraph {
    let text = std::fs::read_to_string(manifest_dir().join("tests/data/two_layer.json")).unwrap();
    parse_model(&text).unwrap()
}

pub fn random_dense(rng: &mut impl Rng, name: &str, n_in: usize, n_out: usize, scale: f64, zero_p: f64) -> LayerNode {
    let w = (0..n_in * n_out)
        .map(|_| if rng.gen_bool(zero_p) { 0.0 } else { rng.gen_range(-scale..scale) })
        .collect();
    let b = (0..n_out).map(|_| rng.gen_range(-scale..scale)).collect();
    LayerNode::dense(name, Tensor::matrix(n_out, n_in, w), Tensor::vector(b))
}

pub fn random_batch_norm(rng: &mut impl Rng, name: &str, n: usize) -> LayerNode {
    let gamma = (0..n)
        .map(|_| {
            let g = rng.gen_range(0.3..1.5);
            if rng.gen_bool(0.5) {
                g
            } else {
                -g
            }
        })
        .collect();
    let mut v = |lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>();
    LayerNode::batch_norm(name, gamma, v(-0.5, 0.5), v(-1.0, 1.0), v(0.2, 2.0), 1e-3)
}

pub fn precision(weight: FixedSpec, bias: FixedSpec, acc: FixedSpec, result: FixedSpec) -> PrecisionSet {
    PrecisionSet {
        weight,
        bias,
        accumulator: acc,
        result,
    }
}

// ---- code generation ----

fn files_under(dir: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out
}

fn manifest_without_timestamp(text: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap_or(serde_json::Value::Null);
    if let Some(o) = v.as_object_mut() {
        o.remove("generated_at_unix");
    }
    v
}

pub fn golden_dir() -> PathBuf {
    manifest_dir().join("tests/golden/two_layer")
}

/// Differences between `tree` and the checked-in golden tree, ignoring
/// only the manifest timestamp.
pub fn golden_differences(tree: &ProjectTree) -> Vec<String> {
    let golden = golden_dir();
    let mut diffs = Vec::new();
    let mut expected = files_under(&golden);
    if !expected.remove("manifest.json") {
        diffs.push("golden manifest.json missing".into());
    }
    let emitted: BTreeSet<String> = tree.files.keys().cloned().collect();
    for p in emitted.symmetric_difference(&expected) {
        diffs.push(format!("{p} present on one side only"));
    }
    for (path, contents) in &tree.files {
        if let Ok(want) = std::fs::read_to_string(golden.join(path)) {
            if want != *contents {
                diffs.push(format!("{path} differs"));
            }
        }
    }
    let want = std::fs::read_to_string(golden.join("manifest.json")).unwrap_or_default();
    if manifest_without_timestamp(&tree.manifest_json()) != manifest_without_timestamp(&want) {
        diffs.push("manifest.json differs outside the timestamp".into());
    }
    diffs
}

pub fn cxx_compiler() -> Option<String> {
    let cxx = std::env::var("CXX").unwrap_or_else(|_| "g++".into());
    Command::new(&cxx)
        .arg("--version")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .ok()
        .filter(|s| s.success())
        .map(|_| cxx)
}

/// Builds the emitted project for `model`, feeds it `inputs` raw vectors
/// drawn from the input format and compares every output with the
/// emulator.
pub fn compile_and_compare(cxx: &str, model: &ModelGraph, inputs: usize, rng: &mut impl Rng) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    emit_project(model, &CodegenConfig::default())
        .map_err(|e| e.to_string())?
        .write_to(dir.path())
        .map_err(|e| e.to_string())?;
    let build = Command::new("sh")
        .arg(dir.path().join("build.sh"))
        .env("CXX", cxx)
        .output()
        .map_err(|e| e.to_string())?;
    if !build.status.success() {
        return Err(format!("{}: build failed: {}", model.name, String::from_utf8_lossy(&build.stderr)));
    }
    let compiled = CompiledModel::compile(model).map_err(|e| e.to_string())?;
    let s = compiled.input_spec;
    let rows: Vec<Vec<i64>> = (0..inputs)
        .map(|k| {
            (0..compiled.input_width)
                .map(|_| match k % 10 {
                    0 => s.min_raw(),
                    1 => s.max_raw(),
                    _ => rng.gen_range(s.min_raw()..=s.max_raw()),
                })
                .collect()
        })
        .collect();
    let text: String = rows
        .iter()
        .map(|r| r.iter().map(i64::to_string).collect::<Vec<_>>().join(" ") + "\n")
        .collect();
    let mut child = Command::new(dir.path().join("testbench"))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    child.stdin.take().unwrap().write_all(text.as_bytes()).map_err(|e| e.to_string())?;
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{}: testbench failed", model.name));
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    if lines.len() != rows.len() {
        return Err(format!("{}: {} output lines for {} inputs", model.name, lines.len(), rows.len()));
    }
    for (row, line) in rows.iter().zip(lines) {
        let want: Vec<i64> = compiled
            .run_raw(row, false)
            .map_err(|e| e.to_string())?
            .fixed_output
            .iter()
            .map(|f| f.raw())
            .collect();
        let got: Vec<i64> = line.split_whitespace().map(|t| t.parse().unwrap_or(i64::MIN)).collect();
        if got != want {
            return Err(format!("{}: input {row:?}: C++ {got:?} vs emulator {want:?}", model.name));
        }
    }
    Ok(())
}

/// Models covering every emitted layer kind, narrow wrapping
/// accumulators, saturation, unsigned results and wide formats.
pub fn codegen_coverage_models(rng: &mut impl Rng) -> Vec<ModelGraph> {
    let mut models = vec![reference_model()];

    let d1 = random_dense(rng, "dense_1", 6, 5, 2.0, 0.2)
        .with_precision(precision(spec(8, 3), spec(8, 3), spec(12, 5), spec(12, 5)))
        .with_reuse(3);
    let bn = LayerNode::batch_norm(
        "bn",
        vec![1.2, -0.7, 0.9, 1.0, 0.4],
        vec![0.1, 0.0, -0.3, 0.2, 0.5],
        vec![0.0, 0.5, -0.5, 1.0, 0.2],
        vec![1.0, 2.0, 0.5, 0.25, 1.5],
        1e-3,
    )
    .with_precision(precision(spec(10, 2), spec(10, 3), spec(16, 6), spec_with(12, 4, true, true, true)));
    let relu = LayerNode::new("relu_1", LayerKind::Relu).with_precision(PrecisionSet::uniform(spec_with(9, 4, false, true, false)));
    let d2 = random_dense(rng, "dense_2", 5, 4, 1.5, 0.2)
        .with_precision(precision(spec_with(6, 1, true, true, true), spec(8, 2), spec_with(14, 6, true, false, true), spec(10, 4)))
        .with_compression(true);
    let bt = LayerNode::new("binary", LayerKind::BinaryTanh).with_precision(PrecisionSet::uniform(spec(2, 2)));
    let d3 = random_dense(rng, "dense_3", 4, 4, 1.0, 0.2).with_precision(PrecisionSet::uniform(spec(8, 3)));
    let tt = LayerNode::new("ternary", LayerKind::TernaryTanh).with_precision(PrecisionSet::uniform(spec(4, 2)));
    let d4 = random_dense(rng, "dense_4", 4, 3, 1.0, 0.2).with_precision(PrecisionSet::uniform(spec(8, 3)));
    let th = LayerNode::new("threshold", LayerKind::Threshold)
        .with_param("threshold", Tensor::vector(vec![0.3, -0.2, 0.7]))
        .with_param("direction", Tensor::vector(vec![1.0, -1.0, 0.0]))
        .with_precision(PrecisionSet::uniform(spec(2, 2)));
    models.push(ModelGraph::chain("mixed", 6, spec(10, 4), vec![d1, bn, relu, d2, bt, d3, tt, d4, th]));

    let d = random_dense(rng, "dense_1", 3, 3, 100.0, 0.2)
        .with_precision(precision(spec(24, 10), spec(24, 10), spec_with(64, 30, true, true, false), spec_with(48, 20, true, true, true)));
    let r = LayerNode::new("relu_1", LayerKind::Relu).with_precision(PrecisionSet::uniform(spec(20, 2)));
    let d2 = random_dense(rng, "dense_2", 3, 2, 3.0, 0.2).with_precision(precision(spec(16, 4), spec(16, 4), spec(24, 8), spec(18, 8)));
    let sm = LayerNode::new("softmax", LayerKind::Softmax);
    models.push(ModelGraph::chain("wide", 3, spec(40, 12), vec![d, r, d2, sm]));

    let c = LayerNode::new("const", LayerKind::Constant)
        .with_param("value", Tensor::vector(vec![0.5, -1.25, 3.0]))
        .with_precision(PrecisionSet::uniform(spec(8, 3)));
    let d = random_dense(rng, "dense_1", 3, 2, 1.0, 0.2).with_precision(PrecisionSet::uniform(spec(12, 4)));
    models.push(ModelGraph::chain("constant_head", 2, spec(8, 3), vec![c, d]));
    models
}

/// A random `dense, [batch_norm], relu, ..., dense` chain with random
/// formats, reuse factors and compression flags.
pub fn random_chain(rng: &mut impl Rng, batch_norm: bool) -> ModelGraph {
    let input = rng.gen_range(1..=8);
    let depth = rng.gen_range(1..=3);
    let mut layers = Vec::new();
    let mut width = input;
    for k in 1..=depth {
        let out = rng.gen_range(1..=8);
        let p = PrecisionSet {
            weight: random_spec(rng, 4..=16, false),
            bias: random_spec(rng, 4..=16, false),
            accumulator: random_spec(rng, 12..=32, false),
            result: random_spec(rng, 8..=20, false),
        };
        let reuse = rng.gen_range(1..=(width * out) as u32);
        layers.push(
            random_dense(rng, &format!("dense_{k}"), width, out, 2.0, 0.2)
                .with_precision(p)
                .with_reuse(reuse)
                .with_compression(rng.gen_bool(0.3)),
        );
        if k < depth {
            if batch_norm {
                layers.push(random_batch_norm(rng, &format!("bn_{k}"), out));
            }
            layers.push(LayerNode::new(format!("relu_{k}"), LayerKind::Relu).with_precision(PrecisionSet::uniform(p.result)));
        }
        width = out;
    }
    ModelGraph::chain("chain", input, random_spec(rng, 8..=16, false), layers)
}
