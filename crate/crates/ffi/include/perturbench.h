#ifndef PERTURBENCH_H
#define PERTURBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum PbStatus {
  PB_STATUS_OK = 0,
  PB_STATUS_NULL_POINTER = 1,
  PB_STATUS_INVALID_UTF8 = 2,
  PB_STATUS_DIMENSION = 3,
  PB_STATUS_CONFIG = 4,
  PB_STATUS_INPUT = 5,
  PB_STATUS_STATE = 6,
  PB_STATUS_TRAINING = 7,
  PB_STATUS_DEGENERATE = 8,
  PB_STATUS_FORMAT = 9,
  PB_STATUS_CORRUPTION = 10,
  PB_STATUS_IO = 11,
  PB_STATUS_SERDE = 12,
  PB_STATUS_BUFFER_TOO_SMALL = 13,
  PB_STATUS_PANIC = 14,
} PbStatus;

/**
 * Opaque model handle.
 */
typedef struct PbModel PbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pb_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the next call.
 */
const char *pb_last_error_message(void);

/**
 * Loads a checkpoint file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PbStatus pb_model_load(const char *path, struct PbModel **out);

/**
 * Builds a freshly initialised model from a JSON model configuration.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PbStatus pb_model_build(const char *config_json, uint64_t seed, struct PbModel **out);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from `pb_model_load`/`pb_model_build` and not be used afterwards.
 */
void pb_model_free(struct PbModel *model);

/**
 * Writes the class count and the `[C, H, W]` input shape.
 *
 * # Safety
 * `model` must be a live handle; `num_classes` and `shape` (3 elements) valid pointers.
 */
enum PbStatus pb_model_info(const struct PbModel *model, size_t *num_classes, size_t *shape);

/**
 * Writes the SHA-256 parameter checksum as 64 hex characters plus NUL; `len` must be at least 65.
 *
 * # Safety
 * `model` must be a live handle and `buf` valid for `len` bytes.
 */
enum PbStatus pb_model_checksum(const struct PbModel *model, char *buf, size_t len);

/**
 * Classifies one image. `probabilities` may be NULL; otherwise it receives `num_classes` values
 * and `probabilities_len` must be at least that.
 *
 * # Safety
 * `model` must be a live handle, `image` valid for `len` doubles, outputs valid pointers.
 */
enum PbStatus pb_predict(const struct PbModel *model,
                         const double *image,
                         size_t len,
                         size_t *predicted_class,
                         double *confidence,
                         double *probabilities,
                         size_t probabilities_len);

/**
 * FGSM: writes `clip(x + ε·sign(∇x J), 0, 1)` to `out` (`len` doubles).
 *
 * # Safety
 * `model` must be a live handle; `image` and `out` valid for `len` doubles.
 */
enum PbStatus pb_fgsm(const struct PbModel *model,
                      const double *image,
                      size_t len,
                      size_t label,
                      double epsilon,
                      double *out);

/**
 * BIM: `iterations` signed steps of size `step_size`, clipped to the ε-ball and `[0, 1]`.
 *
 * # Safety
 * `model` must be a live handle; `image` and `out` valid for `len` doubles.
 */
enum PbStatus pb_bim(const struct PbModel *model,
                     const double *image,
                     size_t len,
                     size_t label,
                     double epsilon,
                     double step_size,
                     size_t iterations,
                     double *out);

/**
 * `misclassified / attacked`; zero attacked gives rate 0 with `degenerate` set.
 *
 * # Safety
 * `rate` and `degenerate` must be valid pointers.
 */
enum PbStatus pb_fooling_rate(size_t misclassified,
                              size_t attacked,
                              double *rate,
                              bool *degenerate);

/**
 * Confidence-gated success: the original prediction is `label` with confidence above
 * `threshold` and the adversarial prediction is another class with confidence above `threshold`.
 */
bool pb_attack_success(size_t original_class,
                       double original_confidence,
                       size_t adversarial_class,
                       double adversarial_confidence,
                       size_t label,
                       double threshold);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERTURBENCH_H */
