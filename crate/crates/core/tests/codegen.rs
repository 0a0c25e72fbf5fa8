// SPDX-License-Identifier: Apache-2.0

mod common;

use common::{codegen_coverage_models, compile_and_compare, cxx_compiler, golden_differences, golden_dir, reference_model};
use fixflow::codegen::{emit_project, emit_report, CodegenConfig, REPORT_SCHEMA};
use fixflow::estimator::EstimatorConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn golden_tree_matches() {
    let tree = emit_project(&reference_model(), &CodegenConfig::default()).unwrap();
    if std::env::var_os("FIXFLOW_BLESS").is_some() {
        let golden = golden_dir();
        let _ = std::fs::remove_dir_all(&golden);
        tree.write_to(&golden).unwrap();
    }
    let diffs = golden_differences(&tree);
    assert!(diffs.is_empty(), "{diffs:?}");
}

#[test]
fn emission_is_deterministic() {
    let cfg = CodegenConfig {
        timestamp: Some(7),
        ..CodegenConfig::default()
    };
    let a = emit_project(&reference_model(), &cfg).unwrap();
    let b = emit_project(&reference_model(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.manifest.generated_at_unix, 7);
    let layout: Vec<&str> = a.files.keys().map(String::as_str).collect();
    for p in [
        "build.sh",
        "firmware/fixed.h",
        "firmware/parameters.h",
        "firmware/two_layer.cpp",
        "firmware/two_layer.h",
        "firmware/weights/w1.h",
        "firmware/weights/w3.h",
        "tb/testbench.cpp",
    ] {
        assert!(layout.contains(&p), "{p} missing from {layout:?}");
    }
}

#[test]
fn weights_are_raw_literals_with_spec_comments() {
    let tree = emit_project(&reference_model(), &CodegenConfig::default()).unwrap();
    let w1 = &tree.files["firmware/weights/w1.h"];
    // 0.5 in fixed<8,2> is raw 16.
    assert!(w1.contains("fixed<8,2>"));
    assert!(w1.contains("16LL"));
    let w3 = &tree.files["firmware/weights/w3.h"];
    assert!(w3.contains("CooEntry"));
    let cpp = &tree.files["firmware/two_layer.cpp"];
    assert!(cpp.contains("ff::dense("));
    assert!(cpp.contains("ff::dense_coo("));
    assert!(cpp.contains("reuse_factor 2"));
}

#[test]
fn report_validates_against_schema() {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let text = emit_report(&reference_model(), &[], None, &EstimatorConfig::default()).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    if let Err(errors) = compiled.validate(&report) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("report violates schema: {msgs:?}");
    }
    let mut broken = report.clone();
    broken["estimate"]["resources"]["dsp_total"] = serde_json::json!(-1);
    assert!(!compiled.is_valid(&broken));
}

#[test]
fn compiled_project_bit_matches_emulator() {
    let Some(cxx) = cxx_compiler() else {
        eprintln!("no C++ toolchain found; skipping");
        return;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let models = codegen_coverage_models(&mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for model in models {
        compile_and_compare(&cxx, &model, 100, &mut rng).unwrap();
    }
}

fn weight_block(header: &str) -> &str {
    let start = header.find("// weight").or_else(|| header.find("nonzero weights")).expect("weight comment");
    let rest = &header[start..];
    &rest[..rest.find("};").expect("array end")]
}

fn literals(block: &str) -> Vec<i64> {
    block
        .split(|c: char| !(c.is_ascii_digit() || c == '-' || c == 'L'))
        .filter_map(|t| t.strip_suffix("LL"))
        .map(|t| t.parse().unwrap())
        .collect()
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]

    #[test]
    fn dense_layers_emitted_once_in_order_with_exact_literals(seed in proptest::prelude::any::<u64>()) {
        let g = common::random_chain(&mut ChaCha8Rng::seed_from_u64(seed), false);
        let tree = emit_project(&g, &CodegenConfig::default()).unwrap();
        let cpp = &tree.files["firmware/chain.cpp"];
        let mut last = 0;
        for (pos, node) in g.ordered_nodes().unwrap().into_iter().enumerate().skip(1) {
            if node.kind != fixflow::model_ir::LayerKind::Dense {
                continue;
            }
            let marker = format!("// {}: dense", node.name);
            proptest::prop_assert_eq!(cpp.matches(&marker).count(), 1);
            let at = cpp.find(&marker).unwrap();
            proptest::prop_assert!(at > last);
            last = at;

            let header = &tree.files[&format!("firmware/weights/w{pos}.h")];
            let spec = node.precision.weight;
            proptest::prop_assert!(header.contains(&spec.to_string()));
            let want: Vec<i64> = node
                .param("weight")
                .unwrap()
                .data()
                .iter()
                .map(|w| fixflow::fixed_point::quantize(*w, spec).raw())
                .collect();
            let block = weight_block(header);
            let got = literals(block);
            if node.compression {
                let nonzero: Vec<i64> = want.iter().copied().filter(|r| *r != 0).collect();
                proptest::prop_assert_eq!(got, nonzero);
            } else {
                proptest::prop_assert_eq!(got, want);
            }
        }
    }
}
