// SPDX-License-Identifier: Apache-2.0

//! C ABI over the fixflow core.
//!
//! Every fallible call returns an [`FfStatus`]; on failure the message is
//! available from [`ff_last_error_message`] on the same thread. Models are
//! opaque [`FfModel`] handles released with [`ff_model_free`]. Strings
//! returned by the library are released with [`ff_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fixflow::codegen::emit_report;
use fixflow::estimator::{estimate_model, EstimatorConfig};
use fixflow::fixed_point::{quantize, FixedSpec, Overflow, Rounding};
use fixflow::kernels::CompiledModel;
use fixflow::model_ir::{parse_model, ModelGraph};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidArgument = 4,
    ShapeMismatch = 5,
    KernelError = 6,
    Panic = 7,
}

/// Opaque compiled model.
pub struct FfModel {
    graph: ModelGraph,
    compiled: CompiledModel,
    output_width: usize,
}

/// Model-level resource and timing estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FfEstimate {
    pub dsp_total: u64,
    pub lut_estimate: u64,
    pub total_latency_cycles: u64,
    pub model_ii_cycles: u64,
    pub bops_total: f64,
    pub latency_ns: f64,
    pub throughput_inferences_per_second: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(text).expect("nul bytes removed")));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard(f: impl FnOnce() -> Result<(), (FfStatus, String)>) -> FfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FfStatus::Panic
        }
    }
}

type Failure = (FfStatus, String);

fn null(what: &str) -> (FfStatus, String) {
    (FfStatus::NullPointer, format!("{what} is null"))
}

/// Message describing the last failure on this thread, or null. The
/// pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn ff_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and compiles a model document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_model_parse(json: *const c_char, out: *mut *mut FfModel) -> FfStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (FfStatus::InvalidUtf8, e.to_string()))?;
        let graph = parse_model(text).map_err(|e| (FfStatus::ParseError, e.to_string()))?;
        let compiled = CompiledModel::compile(&graph).map_err(|e| (FfStatus::KernelError, e.to_string()))?;
        let output_width = graph.output_width().map_err(|e| (FfStatus::ParseError, e.to_string()))?;
        *out = Box::into_raw(Box::new(FfModel {
            graph,
            compiled,
            output_width,
        }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`ff_model_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ff_model_free(model: *mut FfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input and output vector lengths.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ff_model_shape(model: *const FfModel, input_width: *mut usize, output_width: *mut usize) -> FfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if input_width.is_null() || output_width.is_null() {
            return Err(null("width pointer"));
        }
        *input_width = m.compiled.input_width;
        *output_width = m.output_width;
        Ok(())
    })
}

unsafe fn slices<'a, A, B>(
    input: *const A,
    n_in: usize,
    output: *mut B,
    n_out: usize,
    m: &FfModel,
) -> Result<(&'a [A], &'a mut [B]), Failure> {
    if input.is_null() || output.is_null() {
        return Err(null("buffer"));
    }
    if n_in != m.compiled.input_width || n_out != m.output_width {
        return Err((
            FfStatus::ShapeMismatch,
            format!(
                "expected {} inputs and {} outputs, got {n_in} and {n_out}",
                m.compiled.input_width, m.output_width
            ),
        ));
    }
    Ok((std::slice::from_raw_parts(input, n_in), std::slice::from_raw_parts_mut(output, n_out)))
}

/// Bit-accurate inference on real inputs, quantized to the input format.
/// Writes the final outputs (probabilities when the model ends in
/// softmax).
///
/// # Safety
/// `input` holds `n_in` values and `output` room for `n_out`.
#[no_mangle]
pub unsafe extern "C" fn ff_model_infer(
    model: *const FfModel,
    input: *const f64,
    n_in: usize,
    output: *mut f64,
    n_out: usize,
) -> FfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let (x, y) = slices(input, n_in, output, n_out, m)?;
        let r = m.compiled.run(x, false).map_err(|e| (FfStatus::KernelError, e.to_string()))?;
        y.copy_from_slice(&r.output);
        Ok(())
    })
}

/// Inference on raw integers of the input format. Writes raw integers of
/// the last fixed-point layer (logits before a final softmax).
///
/// # Safety
/// `input` holds `n_in` values and `output` room for `n_out`.
#[no_mangle]
pub unsafe extern "C" fn ff_model_infer_raw(
    model: *const FfModel,
    input: *const i64,
    n_in: usize,
    output: *mut i64,
    n_out: usize,
) -> FfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let (x, y) = slices(input, n_in, output, n_out, m)?;
        let r = m.compiled.run_raw(x, false).map_err(|e| (FfStatus::KernelError, e.to_string()))?;
        for (d, v) in y.iter_mut().zip(&r.fixed_output) {
            *d = v.raw();
        }
        Ok(())
    })
}

/// Estimate with default settings at `clock_mhz`.
///
/// # Safety
/// `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ff_model_estimate(model: *const FfModel, clock_mhz: f64, out: *mut FfEstimate) -> FfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(clock_mhz > 0.0 && clock_mhz.is_finite()) {
            return Err((FfStatus::InvalidArgument, format!("clock_mhz must be positive, got {clock_mhz}")));
        }
        let cfg = EstimatorConfig {
            clock_mhz,
            ..EstimatorConfig::default()
        };
        let e = estimate_model(&m.graph, None, &cfg).map_err(|e| (FfStatus::ParseError, e.to_string()))?;
        *out = FfEstimate {
            dsp_total: e.resources.dsp_total,
            lut_estimate: e.resources.lut_estimate,
            total_latency_cycles: e.timing.total_latency_cycles,
            model_ii_cycles: e.timing.model_ii_cycles,
            bops_total: e.resources.bops_total,
            latency_ns: e.timing.latency_ns(),
            throughput_inferences_per_second: e.timing.throughput_inferences_per_second,
        };
        Ok(())
    })
}

/// Full JSON report. Release the string with [`ff_string_free`].
///
/// # Safety
/// `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ff_model_report_json(model: *const FfModel, clock_mhz: f64, out: *mut *mut c_char) -> FfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(clock_mhz > 0.0 && clock_mhz.is_finite()) {
            return Err((FfStatus::InvalidArgument, format!("clock_mhz must be positive, got {clock_mhz}")));
        }
        let cfg = EstimatorConfig {
            clock_mhz,
            ..EstimatorConfig::default()
        };
        let text = emit_report(&m.graph, &[], None, &cfg).map_err(|e| (FfStatus::KernelError, e.to_string()))?;
        *out = CString::new(text).expect("JSON has no nul bytes").into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ff_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Quantizes `x` into `fixed<width, integer_bits>` and writes the raw
/// integer.
///
/// # Safety
/// `raw_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ff_fixed_quantize(
    x: f64,
    width: u32,
    integer_bits: i32,
    is_signed: bool,
    round_half_up: bool,
    saturate: bool,
    raw_out: *mut i64,
) -> FfStatus {
    guard(|| {
        if raw_out.is_null() {
            return Err(null("raw_out"));
        }
        if !x.is_finite() {
            return Err((FfStatus::InvalidArgument, "value must be finite".into()));
        }
        let spec = FixedSpec::with_modes(
            width,
            integer_bits,
            is_signed,
            if round_half_up { Rounding::RoundHalfUp } else { Rounding::Truncate },
            if saturate { Overflow::Saturate } else { Overflow::Wrap },
        )
        .map_err(|e| (FfStatus::InvalidArgument, e.to_string()))?;
        *raw_out = quantize(x, spec).raw();
        Ok(())
    })
}

/// Bit operations of an `n -> m` dense layer; negative on bad input.
#[no_mangle]
pub extern "C" fn ff_compute_bops(n: usize, m: usize, weight_bits: u32, activation_bits: u32, pruned_fraction: f64) -> f64 {
    if !(0.0..=1.0).contains(&pruned_fraction) {
        set_error("pruned_fraction must be in [0, 1]");
        return -1.0;
    }
    fixflow::pruning::compute_bops(n, m, weight_bits, activation_bits, pruned_fraction)
}

/// DSP blocks for one `b1 x b2` multiply.
#[no_mangle]
pub extern "C" fn ff_dsp_per_multiply(b1: u32, b2: u32, lut_threshold: u32) -> u32 {
    fixflow::estimator::dsp_per_multiply(b1, b2, lut_threshold)
}
