#ifndef OPINIONXF_H
#define OPINIONXF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum OxfStatus {
  OXF_STATUS_OK = 0,
  OXF_STATUS_NULL_ARGUMENT = 1,
  OXF_STATUS_IO = 2,
  OXF_STATUS_FORMAT = 3,
  OXF_STATUS_INVALID_INPUT = 4,
  OXF_STATUS_NUMERIC = 5,
  OXF_STATUS_BUFFER_TOO_SMALL = 6,
  OXF_STATUS_PANIC = 7,
} OxfStatus;

/**
 * A loaded checkpoint.
 */
typedef struct OxfModel OxfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty when none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *oxf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *oxf_version(void);

/**
 * Load a checkpoint file and store a new handle in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum OxfStatus oxf_model_load(const char *path, struct OxfModel **out);

/**
 * Release a handle from `oxf_model_load`. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle that has not been freed yet.
 */
void oxf_model_free(struct OxfModel *model);

/**
 * Number of survey questions the model predicts.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum OxfStatus oxf_model_num_questions(const struct OxfModel *model, size_t *out);

/**
 * Number of answer options for `question`.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum OxfStatus oxf_model_num_answers(const struct OxfModel *model, size_t question, size_t *out);

/**
 * Copy the text of answer `id` of `question` into `buf` (NUL-terminated).
 * `*needed` receives the required size including the terminator; when
 * `len` is smaller the call returns `BufferTooSmall` and writes nothing.
 *
 * # Safety
 * `buf` must have room for `len` bytes (it may be null when `len` is 0);
 * `needed` must be writable.
 */
enum OxfStatus oxf_model_answer_label(const struct OxfModel *model,
                                      size_t question,
                                      size_t id,
                                      char *buf,
                                      size_t len,
                                      size_t *needed);

/**
 * Id of answer text `label` for `question`.
 *
 * # Safety
 * `label` must be a NUL-terminated string and `out` writable.
 */
enum OxfStatus oxf_model_answer_id(const struct OxfModel *model,
                                   size_t question,
                                   const char *label,
                                   size_t *out);

/**
 * Predict post-exposure answer ids for one participant who saw deck
 * `deck_id` and gave the pre-exposure answer ids `pre_ids[0..n]`.
 * `n` must equal the question count; `out_ids` receives `n` ids.
 *
 * # Safety
 * `deck_id` must be NUL-terminated; `pre_ids` readable and `out_ids`
 * writable for `n` elements.
 */
enum OxfStatus oxf_model_predict(const struct OxfModel *model,
                                 const char *deck_id,
                                 const size_t *pre_ids,
                                 size_t n,
                                 size_t *out_ids);

/**
 * `<Z (x) Z>` of the two-qubit Ry-Ry-CZ circuit.
 */
double oxf_quantum_zz(double theta1, double theta2);

/**
 * Discrete Fourier transform of `input[0..n]` into `out_re`/`out_im`.
 *
 * # Safety
 * `input` readable and both outputs writable for `n` elements.
 */
enum OxfStatus oxf_fft(const double *input, size_t n, double *out_re, double *out_im);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPINIONXF_H */
