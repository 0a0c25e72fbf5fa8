// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{c_identifier, BackendWriter, CodegenConfig, CodegenError};
use crate::fixed_point::{quantize, Exact, Fixed, FixedSpec};
use crate::kernels::{CompiledLayer, CompiledModel};
use crate::model_ir::{LayerKind, ModelGraph};

/// Generic HLS-style C++ backend with an embedded fixed-point header.
#[derive(Debug, Default, Clone, Copy)]
pub struct HlsCppWriter;

const FIXED_H: &str = include_str!("fixed.h");

const LICENSE: &str = "// SPDX-License-Identifier: Apache-2.0\n";

fn spec_literal(s: FixedSpec) -> String {
    format!(
        "{{{}, {}, {}, {}, {}}}",
        s.width(),
        s.frac_bits(),
        s.is_signed(),
        s.rounding() == crate::fixed_point::Rounding::RoundHalfUp,
        s.overflow() == crate::fixed_point::Overflow::Saturate
    )
}

fn i64_literal(v: i64) -> String {
    if v == i64::MIN {
        "(-9223372036854775807LL - 1)".into()
    } else {
        format!("{v}LL")
    }
}

fn i128_literal(v: i128) -> String {
    if let Ok(small) = i64::try_from(v) {
        i64_literal(small)
    } else {
        format!("ff::make_i128({}, {}ULL)", i64_literal((v >> 64) as i64), v as u64)
    }
}

/// `floor(t * 2^frac)`, or its ceiling, clamped well outside any 64-bit
/// raw range.
fn scaled_bound(t: Exact, frac: i32, ceil: bool) -> i128 {
    const LIMIT: i128 = 1 << 66;
    let k = frac as i64 - t.frac as i64;
    if t.mant == 0 {
        return 0;
    }
    if k >= 0 {
        let len = 128 - t.mant.unsigned_abs().leading_zeros() as i64;
        if len + k > 66 {
            return if t.mant < 0 { -LIMIT } else { LIMIT };
        }
        return t.mant << k;
    }
    let s = -k;
    let floor = |m: i128| if s >= 127 { if m < 0 { -1 } else { 0 } } else { m >> s };
    if ceil {
        -floor(-t.mant)
    } else {
        floor(t.mant)
    }
}

fn raw_list(values: impl Iterator<Item = i64>) -> String {
    let items: Vec<String> = values.map(i64_literal).collect();
    let mut out = String::new();
    for (k, chunk) in items.chunks(12).enumerate() {
        if k > 0 {
            out.push('\n');
        }
        out.push_str("    ");
        out.push_str(&chunk.join(", "));
        out.push(',');
    }
    out
}

fn fixed_array(name: &str, values: &[Fixed], spec: FixedSpec, note: &str) -> String {
    let mut s = format!(
        "// {note}: {spec}, value = raw * 2^-{}\nstatic const ff::i64 {name}[{}] = {{\n",
        spec.frac_bits(),
        values.len().max(1)
    );
    if values.is_empty() {
        s.push_str("    0,");
    } else {
        s.push_str(&raw_list(values.iter().map(Fixed::raw)));
    }
    s.push_str("\n};\n");
    s
}

struct Emitted {
    header: Option<String>,
    call: String,
}

impl BackendWriter for HlsCppWriter {
    fn name(&self) -> &'static str {
        "hls-cpp"
    }

    fn emit_files(&self, graph: &ModelGraph, cfg: &CodegenConfig) -> Result<BTreeMap<String, String>, CodegenError> {
        let compiled = CompiledModel::compile(graph)?;
        let model = c_identifier(cfg.project_name.as_deref().unwrap_or(&graph.name));
        let nodes = graph.ordered_nodes()?;
        let mut files = BTreeMap::new();
        let mut params = String::new();
        let mut body = String::new();
        let mut includes = String::new();

        let mut cur = "input".to_string();
        let mut cur_spec = compiled.input_spec;
        let mut cur_width = compiled.input_width;
        let _ = writeln!(params, "{LICENSE}#ifndef FF_PARAMETERS_H\n#define FF_PARAMETERS_H\n\n#include \"fixed.h\"\n");
        let _ = writeln!(params, "#define N_INPUT {}", compiled.input_width);
        let _ = writeln!(params, "// input: {}\nstatic const ff::Spec input_spec = {};", cur_spec, spec_literal(cur_spec));

        let mut dense_seen = 0usize;
        for (k, ((name, layer), node)) in compiled.layers.iter().zip(nodes.iter().skip(1)).enumerate() {
            let k = k + 1;
            let id = c_identifier(name);
            if let CompiledLayer::Softmax = layer {
                let _ = writeln!(body, "    // {name}: softmax is left to the host; outputs are logits");
                continue;
            }
            let res = node.precision.result;
            let out_width = match layer {
                CompiledLayer::Dense { weights, .. } => weights.n_out,
                CompiledLayer::Constant(v) => v.len(),
                _ => cur_width,
            };
            let _ = writeln!(params, "\n// {name}: {}", node.kind.as_str());
            let _ = writeln!(params, "#define N_{} {}", id.to_uppercase(), out_width);
            let _ = writeln!(params, "static const ff::Spec {id}_result = {}; // {res}", spec_literal(res));
            let plus_minus = |spec: FixedSpec| (quantize(1.0, spec).raw(), quantize(-1.0, spec).raw());
            let out = format!("{id}_out");
            let emitted = match layer {
                CompiledLayer::Dense { weights, coo, bias, precision } => {
                    dense_seen += 1;
                    let p = precision;
                    let _ = writeln!(params, "static const ff::Spec {id}_weight = {}; // {}", spec_literal(p.weight), p.weight);
                    let _ = writeln!(params, "static const ff::Spec {id}_bias = {}; // {}", spec_literal(p.bias), p.bias);
                    let _ = writeln!(params, "static const ff::Spec {id}_accum = {}; // {}", spec_literal(p.accumulator), p.accumulator);
                    let _ = writeln!(params, "#define {}_REUSE {}", id.to_uppercase(), node.reuse_factor);
                    let mut h = format!("{LICENSE}// {name}: dense {} -> {}\n#pragma once\n#include \"../parameters.h\"\n\n", weights.n_in, weights.n_out);
                    let mut call = format!(
                        "    // {name}: dense {} -> {}, reuse_factor {}, initiation interval {}{}\n",
                        weights.n_in,
                        weights.n_out,
                        node.reuse_factor,
                        node.reuse_factor,
                        if coo.is_some() { ", COO compressed" } else { "" }
                    );
                    match coo {
                        Some(coo) => {
                            let _ = writeln!(
                                h,
                                "// {} nonzero weights of {}x{}; packed index = out * {} + in ({} bits); {}, value = raw * 2^-{}",
                                coo.entries.len(),
                                weights.n_out,
                                weights.n_in,
                                weights.n_in,
                                coo.index_bits(),
                                p.weight,
                                p.weight.frac_bits()
                            );
                            let _ = writeln!(h, "static const ff::CooEntry w{k}[{}] = {{", coo.entries.len().max(1));
                            if coo.entries.is_empty() {
                                h.push_str("    {0, 0},\n");
                            }
                            for e in &coo.entries {
                                let _ = writeln!(h, "    {{{}, {}}},", e.index, i64_literal(e.raw));
                            }
                            h.push_str("};\n");
                            let _ = writeln!(params, "#define W{k}_NNZ {}", coo.entries.len());
                            let _ = writeln!(
                                call,
                                "    ff::dense_coo({cur}, {}, w{k}, W{k}_NNZ, {id}_weight, b{k}, {id}_bias, {id}_accum, {id}_result, {}, {}, {out});",
                                spec_name(&cur),
                                weights.n_in,
                                weights.n_out
                            );
                        }
                        None => {
                            h.push_str(&fixed_array(&format!("w{k}"), &weights.values, p.weight, &format!("weight [{} x {}]", weights.n_out, weights.n_in)));
                            let _ = writeln!(
                                call,
                                "    ff::dense({cur}, {}, w{k}, {id}_weight, b{k}, {id}_bias, {id}_accum, {id}_result, {}, {}, {out});",
                                spec_name(&cur),
                                weights.n_in,
                                weights.n_out
                            );
                        }
                    }
                    h.push('\n');
                    h.push_str(&fixed_array(&format!("b{k}"), bias, p.bias, "bias"));
                    Emitted { header: Some(h), call }
                }
                CompiledLayer::Scale { scale, shift, precision } => {
                    let p = precision;
                    let _ = writeln!(params, "static const ff::Spec {id}_scale = {}; // {}", spec_literal(p.weight), p.weight);
                    let _ = writeln!(params, "static const ff::Spec {id}_shift = {}; // {}", spec_literal(p.bias), p.bias);
                    let _ = writeln!(params, "static const ff::Spec {id}_accum = {}; // {}", spec_literal(p.accumulator), p.accumulator);
                    let mut h = format!("{LICENSE}// {name}: per-channel scale and shift\n#pragma once\n#include \"../parameters.h\"\n\n");
                    h.push_str(&fixed_array(&format!("s{k}"), scale, p.weight, "scale"));
                    h.push('\n');
                    h.push_str(&fixed_array(&format!("h{k}"), shift, p.bias, "shift"));
                    let call = format!(
                        "    // {name}: scale and shift\n    ff::scale({cur}, {}, s{k}, {id}_scale, h{k}, {id}_shift, {id}_accum, {id}_result, {cur_width}, {out});\n",
                        spec_name(&cur)
                    );
                    Emitted { header: Some(h), call }
                }
                CompiledLayer::Relu(_) => Emitted {
                    header: None,
                    call: format!("    // {name}: relu\n    ff::relu({cur}, {}, {id}_result, {cur_width}, {out});\n", spec_name(&cur)),
                },
                CompiledLayer::BinaryTanh(spec) => {
                    let (plus, minus) = plus_minus(*spec);
                    Emitted {
                        header: None,
                        call: format!(
                            "    // {name}: binary tanh, +1 when x >= 0\n    ff::binary_tanh({cur}, {}, {}, {cur_width}, {out});\n",
                            i64_literal(plus),
                            i64_literal(minus)
                        ),
                    }
                }
                CompiledLayer::TernaryTanh(spec) => {
                    let (plus, minus) = plus_minus(*spec);
                    let f = cur_spec.frac_bits();
                    let hi = scaled_bound(Exact::new(1, 1), f, false);
                    let lo = scaled_bound(Exact::new(-1, 1), f, false);
                    Emitted {
                        header: None,
                        call: format!(
                            "    // {name}: ternary tanh, +1 above 0.5, -1 at or below -0.5\n    ff::ternary_tanh({cur}, {}, {}, {}, {}, {cur_width}, {out});\n",
                            i128_literal(hi),
                            i128_literal(lo),
                            i64_literal(plus),
                            i64_literal(minus)
                        ),
                    }
                }
                CompiledLayer::Threshold { thresholds, directions, result } => {
                    let (plus, minus) = plus_minus(*result);
                    let f = cur_spec.frac_bits();
                    let mut h = format!(
                        "{LICENSE}// {name}: per-channel thresholds as raw bounds of the input format {cur_spec}\n#pragma once\n#include \"../parameters.h\"\n\n"
                    );
                    let _ = writeln!(h, "static const ff::i128 t{k}[{}] = {{", thresholds.len().max(1));
                    let mut modes = Vec::new();
                    for (t, d) in thresholds.iter().zip(directions) {
                        let (bound, mode) = match d {
                            1 => (scaled_bound(*t, f, true), 1),
                            -1 => (scaled_bound(*t, f, false), -1),
                            _ => (0, if t.mant >= 0 { 2 } else { -2 }),
                        };
                        let _ = writeln!(h, "    {},", i128_literal(bound));
                        modes.push(mode.to_string());
                    }
                    if thresholds.is_empty() {
                        h.push_str("    0,\n");
                        modes.push("2".into());
                    }
                    let _ = writeln!(h, "}};\nstatic const int m{k}[{}] = {{{}}};", modes.len(), modes.join(", "));
                    let call = format!(
                        "    // {name}: threshold\n    ff::threshold({cur}, t{k}, m{k}, {}, {}, {cur_width}, {out});\n",
                        i64_literal(plus),
                        i64_literal(minus)
                    );
                    Emitted { header: Some(h), call }
                }
                CompiledLayer::Constant(values) => {
                    let mut h = format!("{LICENSE}// {name}: constant\n#pragma once\n#include \"../parameters.h\"\n\n");
                    h.push_str(&fixed_array(&format!("c{k}"), values, res, "value"));
                    let call = format!(
                        "    // {name}: constant\n    for (int c = 0; c < {}; ++c) {out}[c] = c{k}[c];\n",
                        values.len()
                    );
                    Emitted { header: Some(h), call }
                }
                CompiledLayer::Softmax => unreachable!(),
            };
            if let Some(h) = emitted.header {
                files.insert(format!("firmware/weights/w{k}.h"), h);
                let _ = writeln!(includes, "#include \"weights/w{k}.h\"");
            }
            let _ = writeln!(body, "    ff::i64 {out}[{}];", out_width.max(1));
            body.push_str(&emitted.call);
            if node.kind == LayerKind::Constant {
                let _ = writeln!(body, "    (void){cur};");
            }
            cur = out;
            cur_spec = res;
            cur_width = out_width;
        }
        let _ = writeln!(params, "\n#define N_OUTPUT {cur_width}");
        let _ = writeln!(params, "#define N_DENSE {dense_seen}");
        params.push_str("\n#endif\n");

        let mut cpp = format!("{LICENSE}// Generated from model `{}`.\n#include \"{model}.h\"\n\n{includes}\n", graph.name);
        let _ = writeln!(cpp, "void {model}(const ff::i64 input[N_INPUT], ff::i64 output[N_OUTPUT]) {{");
        cpp.push_str(&body);
        let _ = writeln!(cpp, "    for (int c = 0; c < N_OUTPUT; ++c) output[c] = {cur}[c];\n}}");

        let header = format!(
            "{LICENSE}#ifndef FF_{up}_H\n#define FF_{up}_H\n\n#include \"parameters.h\"\n\n// Raw inputs in input_spec; raw outputs in the last layer's result format.\nvoid {model}(const ff::i64 input[N_INPUT], ff::i64 output[N_OUTPUT]);\n\n#endif\n",
            up = model.to_uppercase()
        );

        files.insert(format!("firmware/{model}.cpp"), cpp);
        files.insert(format!("firmware/{model}.h"), header);
        files.insert("firmware/parameters.h".into(), params);
        files.insert("firmware/fixed.h".into(), FIXED_H.to_string());
        files.insert("tb/testbench.cpp".into(), testbench(&model));
        files.insert("build.sh".into(), build_script(&model));
        Ok(files)
    }
}

fn spec_name(buffer: &str) -> String {
    if buffer == "input" {
        "input_spec".into()
    } else {
        format!("{}_result", buffer.trim_end_matches("_out"))
    }
}

fn testbench(model: &str) -> String {
    format!(
        r#"{LICENSE}// Reads one whitespace-separated raw input vector per line and writes one
// raw output vector per line.
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "{model}.h"

int main(int argc, char** argv) {{
    std::ifstream file;
    std::istream* in = &std::cin;
    if (argc > 1) {{
        file.open(argv[1]);
        if (!file) {{
            std::cerr << "cannot open " << argv[1] << "\n";
            return 1;
        }}
        in = &file;
    }}
    std::string line;
    long lineno = 0;
    while (std::getline(*in, line)) {{
        ++lineno;
        std::istringstream fields(line);
        std::vector<long long> v;
        long long t;
        while (fields >> t) v.push_back(t);
        if (v.empty()) continue;
        if (v.size() != N_INPUT) {{
            std::cerr << "line " << lineno << ": expected " << N_INPUT << " values\n";
            return 1;
        }}
        ff::i64 x[N_INPUT];
        ff::i64 y[N_OUTPUT];
        for (int i = 0; i < N_INPUT; ++i) {{
            if ((ff::i128)v[i] < ff::min_raw(input_spec) || (ff::i128)v[i] > ff::max_raw(input_spec)) {{
                std::cerr << "line " << lineno << ": value " << v[i] << " outside the input format\n";
                return 1;
            }}
            x[i] = v[i];
        }}
        {model}(x, y);
        for (int o = 0; o < N_OUTPUT; ++o) std::cout << (o ? " " : "") << y[o];
        std::cout << "\n";
    }}
    return 0;
}}
"#
    )
}

fn build_script(model: &str) -> String {
    format!(
        "#!/bin/sh\n# SPDX-License-Identifier: Apache-2.0\nset -e\ncd \"$(dirname \"$0\")\"\n${{CXX:-g++}} -std=c++17 -O2 -Wall -Ifirmware firmware/{model}.cpp tb/testbench.cpp -o testbench\n"
    )
}
