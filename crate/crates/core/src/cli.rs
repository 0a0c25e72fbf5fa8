// SPDX-License-Identifier: Apache-2.0

//! The `fixflow` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codegen::{build_report, emit_project};
use crate::config::RunConfig;
use crate::estimator::{reuse_sweep, sweep_csv};
use crate::kernels::{CompiledModel, TapValues};
use crate::model_ir::{parse_model, serialize_model, ModelGraph};
use crate::passes::optimize;
use crate::profiler::{check_coverage, profile_weights};
use crate::pruning::{prune_iterative, PruneMethod};
use crate::scan::scan;
use crate::trainer::{evaluate, mlp, synthetic_jet, train, train_qat, Arithmetic, Dataset, Evaluation, TrainOutcome};

#[derive(Debug, Parser)]
#[command(name = "fixflow", version, about = "Fixed-point compiler and co-design toolkit for fully-connected networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// Versioned run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training, split and initialization seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the estimator clock.
    #[arg(long = "clock-mhz", global = true)]
    clock_mhz: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    L1,
    Lt,
    Qap,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, optimize and validate a model, then write its canonical form.
    Convert {
        #[arg(long)]
        model: PathBuf,
        /// Output model path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Weight statistics and format coverage.
    Profile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Floating-point training.
    Train {
        #[command(flatten)]
        io: TrainIo,
        #[command(flatten)]
        common: Common,
    },
    /// Quantization-aware training.
    Qat {
        #[command(flatten)]
        io: TrainIo,
        /// Total weight width of the quantizer.
        #[arg(long)]
        bits: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Iterative magnitude pruning.
    Prune {
        #[command(flatten)]
        io: TrainIo,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long = "target-fraction")]
        target_fraction: Option<f64>,
        /// Quantizer width for `qap`.
        #[arg(long)]
        bits: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Bit-accurate batch inference.
    Emulate {
        #[arg(long)]
        model: PathBuf,
        /// Raw integer vectors, one per line, or a CSV of real values.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write every layer's output.
        #[arg(long)]
        taps: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Resource and timing estimates.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated reuse factors for a sweep.
        #[arg(long, value_delimiter = ',')]
        reuse: Vec<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// PTQ versus QAT accuracy across weight widths.
    Scan {
        #[command(flatten)]
        io: TrainIo,
        /// `lo..hi` (inclusive) or a comma-separated list.
        #[arg(long)]
        bits: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Emit the C++ project.
    Codegen {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args, Clone)]
struct TrainIo {
    /// Starting model; a fresh network from the config when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    /// `synthetic` or a CSV whose last column is `label`.
    #[arg(long, default_value = "synthetic")]
    data: String,
    #[arg(long)]
    out: PathBuf,
}

type Result<T> = std::result::Result<T, String>;

fn err<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> String {
    move |e| format!("{context}: {e}")
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("FIXFLOW_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::parse(&read(p)?)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    cfg.resolve_seed();
    if let Some(c) = common.clock_mhz {
        if !(c > 0.0 && c.is_finite()) {
            return Err(format!("--clock-mhz must be positive, got {c}"));
        }
        cfg.estimator.clock_mhz = c;
    }
    Ok(cfg)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(err(path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(err(parent.display()))?;
    }
    std::fs::write(path, contents).map_err(err(path.display()))
}

fn load_model(path: &Path) -> Result<ModelGraph> {
    parse_model(&read(path)?).map_err(err(path.display()))
}

fn refuse_overwrite(input: &Path, out: &Path) -> Result<()> {
    let same = match (input.canonicalize(), out.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(format!("refusing to overwrite input {}", input.display()));
    }
    Ok(())
}

fn load_data(spec: &str, cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let data = if spec == "synthetic" {
        synthetic_jet(&cfg.synthetic)
    } else {
        Dataset::from_csv(Path::new(spec)).map_err(|e| e.to_string())?
    };
    let f = cfg.split.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(format!("split.train_fraction must be in (0, 1), got {f}"));
    }
    Ok(data.split(f, cfg.split.seed))
}

fn start_model(io: &TrainIo, cfg: &RunConfig, data: &Dataset) -> Result<ModelGraph> {
    match &io.model {
        Some(p) => load_model(p),
        None => Ok(mlp(
            &cfg.architecture.name,
            data.width,
            &cfg.architecture.hidden,
            data.class_count,
            true,
            cfg.architecture.init_seed,
        )),
    }
}

fn metrics_json(e: &Evaluation) -> serde_json::Value {
    serde_json::json!({
        "accuracy": e.accuracy,
        "mean_auc": e.mean_auc,
        "per_class": e.per_class,
    })
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn write_training(out: &Path, outcome: &TrainOutcome, test: &Dataset, cfg: &RunConfig) -> Result<()> {
    let real = evaluate(&outcome.model, test, Arithmetic::Real).map_err(|e| e.to_string())?;
    let fixed_model = outcome
        .model
        .with_datapath(cfg.datapath.input, cfg.datapath.accumulator, cfg.datapath.result);
    let fixed = evaluate(&fixed_model, test, Arithmetic::Fixed).map_err(|e| e.to_string())?;
    write(&out.join("model.json"), &serialize_model(&fixed_model))?;
    write(&out.join("loss.csv"), &outcome.trace.to_csv())?;
    let metrics = serde_json::json!({ "real": metrics_json(&real), "fixed": metrics_json(&fixed) });
    write(&out.join("metrics.json"), &pretty(&metrics))?;
    println!("accuracy: real {:.4}, fixed {:.4}", real.accuracy, fixed.accuracy);
    Ok(())
}

fn parse_bits(text: &str) -> Result<Vec<u32>> {
    let bad = || format!("bad --bits `{text}`: use `lo..hi` or a comma-separated list");
    let bits: Vec<u32> = if let Some((lo, hi)) = text.split_once("..") {
        let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u32 = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        (lo..=hi).collect()
    } else {
        text.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if bits.is_empty() || bits.contains(&0) {
        return Err(bad());
    }
    Ok(bits)
}

/// Rows of real values (CSV, optional trailing `label` column) or raw
/// integers (whitespace-separated lines).
enum EmulateInput {
    Real(Vec<Vec<f64>>),
    Raw(Vec<Vec<i64>>),
}

fn read_emulate_input(path: &Path) -> Result<EmulateInput> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut reader = csv::Reader::from_path(path).map_err(err(path.display()))?;
        let headers = reader.headers().map_err(err(path.display()))?.clone();
        let width = headers.len() - usize::from(headers.iter().next_back().map(str::trim) == Some("label"));
        let mut rows = Vec::new();
        for (k, rec) in reader.records().enumerate() {
            let rec = rec.map_err(err(path.display()))?;
            let row = rec
                .iter()
                .take(width)
                .map(|f| f.trim().parse::<f64>().map_err(|_| format!("{} row {}: bad value `{f}`", path.display(), k + 2)))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        return Ok(EmulateInput::Real(rows));
    }
    let text = read(path)?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<i64>().map_err(|_| format!("{} line {}: bad integer `{t}`", path.display(), k + 1)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(EmulateInput::Raw(rows))
}

fn tap_line(v: &TapValues) -> String {
    match v {
        TapValues::Fixed(f) => f.iter().map(|x| x.raw().to_string()).collect::<Vec<_>>().join(" "),
        TapValues::Real(r) => r.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Convert { model, out, common } => {
            load_config(&common)?;
            let graph = load_model(&model)?;
            let (optimized, reports) = optimize(&graph).map_err(|e| e.to_string())?;
            for r in reports.iter().filter(|r| !r.is_empty()) {
                for w in &r.rewrites {
                    eprintln!("{}: {:?} -> {}", r.pass_name, w.removed, w.absorbed_into);
                }
            }
            let text = serialize_model(&optimized);
            parse_model(&text).map_err(|e| e.to_string())?;
            match out {
                Some(o) => {
                    refuse_overwrite(&model, &o)?;
                    write(&o, &text)
                }
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Profile { model, out, common } => {
            load_config(&common)?;
            let graph = load_model(&model)?;
            let report = profile_weights(&graph);
            let coverage = check_coverage(&report, &graph);
            let text = pretty(&serde_json::json!({ "profile": report, "coverage": coverage }));
            for f in &coverage {
                eprintln!("{:?}: {}", f.severity, f.message);
            }
            match out {
                Some(o) => {
                    refuse_overwrite(&model, &o)?;
                    write(&o, &text)
                }
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Train { io, common } => {
            let cfg = load_config(&common)?;
            let (train_set, test_set) = load_data(&io.data, &cfg)?;
            let init = start_model(&io, &cfg, &train_set)?;
            let outcome = train(&init, &train_set, &cfg.training).map_err(|e| e.to_string())?;
            write_training(&io.out, &outcome, &test_set, &cfg)
        }
        Command::Qat { io, bits, common } => {
            let cfg = load_config(&common)?;
            let (train_set, test_set) = load_data(&io.data, &cfg)?;
            let init = start_model(&io, &cfg, &train_set)?;
            let mut q = cfg.quantizer;
            if let Some(b) = bits {
                q.bits = b;
            }
            q.validate()?;
            let tcfg = cfg.training.clone().with_uniform_quantizer(&init, q);
            let outcome = train_qat(&init, &train_set, &tcfg).map_err(|e| e.to_string())?;
            write_training(&io.out, &outcome, &test_set, &cfg)
        }
        Command::Prune {
            io,
            method,
            target_fraction,
            bits,
            common,
        } => {
            let cfg = load_config(&common)?;
            let (train_set, test_set) = load_data(&io.data, &cfg)?;
            let model = start_model(&io, &cfg, &train_set)?;
            let mut schedule = cfg.prune.clone();
            if let Some(m) = method {
                schedule.method = match m {
                    Method::L1 => PruneMethod::L1Retrain,
                    Method::Lt => PruneMethod::LtRewind,
                    Method::Qap => PruneMethod::Qap,
                };
            }
            if let Some(t) = target_fraction {
                schedule.target_fraction = t;
            }
            let mut tcfg = cfg.training.clone();
            if schedule.method == PruneMethod::Qap {
                let mut q = cfg.quantizer;
                if let Some(b) = bits {
                    q.bits = b;
                }
                q.validate()?;
                tcfg = tcfg.with_uniform_quantizer(&model, q);
            }
            let outcome = prune_iterative(&model, &train_set, &test_set, &schedule, &tcfg).map_err(|e| e.to_string())?;
            let out = &io.out;
            write(&out.join("model.json"), &serialize_model(&outcome.model))?;
            write(&out.join("history.csv"), &outcome.state.history_csv())?;
            write(&out.join("masks.json"), &pretty(&outcome.state.masks))?;
            let report = build_report(&outcome.model, &[], Some(&outcome.state), &cfg.estimator).map_err(|e| e.to_string())?;
            write(&out.join("report.json"), &pretty(&report))?;
            if let Some(last) = outcome.state.history.last() {
                println!("pruned {:.3}, accuracy {:.4}", last.pruned_fraction, last.accuracy);
            }
            Ok(())
        }
        Command::Emulate {
            model,
            data,
            out,
            taps,
            common,
        } => {
            load_config(&common)?;
            let graph = load_model(&model)?;
            let compiled = CompiledModel::compile(&graph).map_err(|e| e.to_string())?;
            let input = read_emulate_input(&data)?;
            let runs = match input {
                EmulateInput::Real(rows) => rows.iter().map(|r| compiled.run(r, taps)).collect::<std::result::Result<Vec<_>, _>>(),
                EmulateInput::Raw(rows) => rows.iter().map(|r| compiled.run_raw(r, taps)).collect(),
            }
            .map_err(|e| e.to_string())?;
            let mut outputs = String::new();
            let mut probs = String::new();
            for r in &runs {
                let raws: Vec<String> = r.fixed_output.iter().map(|f| f.raw().to_string()).collect();
                let _ = writeln!(outputs, "{}", raws.join(" "));
                let reals: Vec<String> = r.output.iter().map(f64::to_string).collect();
                let _ = writeln!(probs, "{}", reals.join(" "));
            }
            write(&out.join("output.txt"), &outputs)?;
            write(&out.join("output_real.txt"), &probs)?;
            if taps {
                for (k, (name, _)) in compiled.layers.iter().enumerate() {
                    let text: String = runs.iter().map(|r| tap_line(&r.taps[k].values) + "\n").collect();
                    write(&out.join("taps").join(format!("{name}.txt")), &text)?;
                }
            }
            Ok(())
        }
        Command::Estimate {
            model,
            out,
            reuse,
            common,
        } => {
            let cfg = load_config(&common)?;
            let graph = load_model(&model)?;
            let report = build_report(&graph, &[], None, &cfg.estimator).map_err(|e| e.to_string())?;
            write(&out.join("report.json"), &pretty(&report))?;
            let reuse = if reuse.is_empty() { cfg.reuse.clone() } else { reuse };
            if reuse.contains(&0) {
                return Err("reuse factors must be at least 1".into());
            }
            if !reuse.is_empty() {
                let rows = reuse_sweep(&graph, &reuse, &cfg.estimator).map_err(|e| e.to_string())?;
                write(&out.join("sweep.csv"), &sweep_csv(&rows))?;
            }
            let t = &report.estimate.timing;
            println!(
                "dsp {} latency {} cycles ({:.1} ns) ii {} cycles",
                report.estimate.resources.dsp_total,
                t.total_latency_cycles,
                t.latency_ns(),
                t.model_ii_cycles
            );
            Ok(())
        }
        Command::Scan { io, bits, common } => {
            let mut cfg = load_config(&common)?;
            if let Some(b) = bits {
                cfg.scan.bits = parse_bits(&b)?;
            }
            let (train_set, test_set) = load_data(&io.data, &cfg)?;
            let init = start_model(&io, &cfg, &train_set)?;
            let result = scan(&init, &train_set, &test_set, &cfg.scan_config()).map_err(|e| e.to_string())?;
            write(&io.out.join("scan.csv"), &result.to_csv())?;
            write(&io.out.join("scan.json"), &pretty(&result))?;
            print!("{}", result.to_csv());
            Ok(())
        }
        Command::Codegen { model, out, common } => {
            let cfg = load_config(&common)?;
            let graph = load_model(&model)?;
            let tree = emit_project(&graph, &cfg.codegen).map_err(|e| e.to_string())?;
            tree.write_to(&out).map_err(|e| e.to_string())?;
            println!("wrote {} files to {}", tree.files.len() + 1, out.display());
            Ok(())
        }
    }
}
