/* SPDX-License-Identifier: Apache-2.0 */

#ifndef FIXFLOW_H
#define FIXFLOW_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum FfStatus {
  FF_STATUS_OK = 0,
  FF_STATUS_NULL_POINTER = 1,
  FF_STATUS_INVALID_UTF8 = 2,
  FF_STATUS_PARSE_ERROR = 3,
  FF_STATUS_INVALID_ARGUMENT = 4,
  FF_STATUS_SHAPE_MISMATCH = 5,
  FF_STATUS_KERNEL_ERROR = 6,
  FF_STATUS_PANIC = 7,
} FfStatus;

/**
 * Opaque compiled model.
 */
typedef struct FfModel FfModel;

/**
 * Model-level resource and timing estimate.
 */
typedef struct FfEstimate {
  uint64_t dsp_total;
  uint64_t lut_estimate;
  uint64_t total_latency_cycles;
  uint64_t model_ii_cycles;
  double bops_total;
  double latency_ns;
  double throughput_inferences_per_second;
} FfEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or null. The
 * pointer stays valid until the next library call on this thread.
 */
const char *ff_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ff_version(void);

/**
 * Parses and compiles a model document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FfStatus ff_model_parse(const char *json, struct FfModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`ff_model_parse`] and not be used afterwards.
 */
void ff_model_free(struct FfModel *model);

/**
 * Input and output vector lengths.
 *
 * # Safety
 * All pointers must be valid.
 */
enum FfStatus ff_model_shape(const struct FfModel *model,
                             size_t *input_width,
                             size_t *output_width);

/**
 * Bit-accurate inference on real inputs, quantized to the input format.
 * Writes the final outputs (probabilities when the model ends in
 * softmax).
 *
 * # Safety
 * `input` holds `n_in` values and `output` room for `n_out`.
 */
enum FfStatus ff_model_infer(const struct FfModel *model,
                             const double *input,
                             size_t n_in,
                             double *output,
                             size_t n_out);

/**
 * Inference on raw integers of the input format. Writes raw integers of
 * the last fixed-point layer (logits before a final softmax).
 *
 * # Safety
 * `input` holds `n_in` values and `output` room for `n_out`.
 */
enum FfStatus ff_model_infer_raw(const struct FfModel *model,
                                 const int64_t *input,
                                 size_t n_in,
                                 int64_t *output,
                                 size_t n_out);

/**
 * Estimate with default settings at `clock_mhz`.
 *
 * # Safety
 * `model` and `out` must be valid.
 */
enum FfStatus ff_model_estimate(const struct FfModel *model,
                                double clock_mhz,
                                struct FfEstimate *out);

/**
 * Full JSON report. Release the string with [`ff_string_free`].
 *
 * # Safety
 * `model` and `out` must be valid.
 */
enum FfStatus ff_model_report_json(const struct FfModel *model, double clock_mhz, char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void ff_string_free(char *s);

/**
 * Quantizes `x` into `fixed<width, integer_bits>` and writes the raw
 * integer.
 *
 * # Safety
 * `raw_out` must be valid.
 */
enum FfStatus ff_fixed_quantize(double x,
                                uint32_t width,
                                int32_t integer_bits,
                                bool is_signed,
                                bool round_half_up,
                                bool saturate,
                                int64_t *raw_out);

/**
 * Bit operations of an `n -> m` dense layer; negative on bad input.
 */
double ff_compute_bops(size_t n,
                       size_t m,
                       uint32_t weight_bits,
                       uint32_t activation_bits,
                       double pruned_fraction);

/**
 * DSP blocks for one `b1 x b2` multiply.
 */
uint32_t ff_dsp_per_multiply(uint32_t b1, uint32_t b2, uint32_t lut_threshold);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIXFLOW_H */
