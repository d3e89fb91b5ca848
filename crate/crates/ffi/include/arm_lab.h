#ifndef ARM_LAB_H
#define ARM_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 3 to 9 match the command-line exit codes.
 */
typedef enum ArmStatus {
  ARM_STATUS_OK = 0,
  ARM_STATUS_NULL_POINTER = 1,
  ARM_STATUS_INVALID_ARGUMENT = 2,
  ARM_STATUS_GEOMETRY = 3,
  ARM_STATUS_DATA = 4,
  ARM_STATUS_IO = 5,
  ARM_STATUS_CONFIG = 6,
  ARM_STATUS_NON_FINITE = 7,
  ARM_STATUS_CHECK_FAILED = 8,
  ARM_STATUS_UNINITIALIZED = 9,
  ARM_STATUS_PANIC = 10,
  ARM_STATUS_BUFFER_TOO_SMALL = 11,
} ArmStatus;

/**
 * ARM head with its own parameters and affinity buffer.
 */
typedef struct ArmHeadHandle ArmHeadHandle;

/**
 * Dense f32 tensor of rank 1 to 4.
 */
typedef struct ArmTensor ArmTensor;

typedef struct ArmLayer {
  size_t kernel;
  size_t stride;
  size_t padding;
} ArmLayer;

typedef struct ArmMetrics {
  double weighted_acc;
  double unweighted_acc;
} ArmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *arm_last_error_message(void);

/**
 * Creates a tensor. `data` may be null for zeros, otherwise it must hold
 * the product of `shape` values.
 *
 * # Safety
 * `shape` must point to `rank` values; `data`, when non-null, to the full payload.
 */
enum ArmStatus arm_tensor_new(const size_t *shape,
                              size_t rank,
                              const float *data,
                              struct ArmTensor **out);

/**
 * # Safety
 * `t` must come from this library and not be freed twice.
 */
void arm_tensor_free(struct ArmTensor *t);

/**
 * # Safety
 * `t` must be a live tensor or null (returns 0).
 */
size_t arm_tensor_rank(const struct ArmTensor *t);

/**
 * # Safety
 * `t` must be a live tensor or null (returns 0).
 */
size_t arm_tensor_numel(const struct ArmTensor *t);

/**
 * Copies the extents into `shape`, which must have room for `capacity` values.
 *
 * # Safety
 * `shape` must be writable for `capacity` values.
 */
enum ArmStatus arm_tensor_shape(const struct ArmTensor *t, size_t *shape, size_t capacity);

/**
 * Read-only view of the values; valid while the tensor lives.
 *
 * # Safety
 * `t` must be a live tensor or null (returns null).
 */
const float *arm_tensor_data(const struct ArmTensor *t);

/**
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum ArmStatus arm_tensor_load(const char *path, struct ArmTensor **out);

/**
 * # Safety
 * `t` must be a live tensor and `path` a NUL-terminated string.
 */
enum ArmStatus arm_tensor_save(const struct ArmTensor *t, const char *path);

/**
 * `N×C×H×W → N×(C/r²)×rH×rW`.
 *
 * # Safety
 * `x` must be a live tensor.
 */
enum ArmStatus arm_pixel_shuffle(const struct ArmTensor *x, size_t ratio, struct ArmTensor **out);

/**
 * Inverse of [`arm_pixel_shuffle`].
 *
 * # Safety
 * `y` must be a live tensor.
 */
enum ArmStatus arm_pixel_unshuffle(const struct ArmTensor *y, size_t ratio, struct ArmTensor **out);

/**
 * Square-kernel convolution. With `shared` the kernel is `1×1×k×k` and applied to
 * every channel separately; otherwise it is `Cout×Cin×k×k`.
 *
 * # Safety
 * `x` and `kernel` must be live tensors.
 */
enum ArmStatus arm_conv2d(const struct ArmTensor *x,
                          const struct ArmTensor *kernel,
                          size_t stride,
                          size_t padding,
                          bool shared,
                          struct ArmTensor **out);

/**
 * Window-coverage counts as an `H×W` tensor.
 *
 * # Safety
 * `out` must be writable.
 */
enum ArmStatus arm_perception_map(size_t height,
                                  size_t width,
                                  size_t kernel,
                                  size_t stride,
                                  size_t padding,
                                  struct ArmTensor **out);

/**
 * Contamination after the whole stack as an `H'×W'` tensor.
 *
 * # Safety
 * `layers` must point to `count` entries.
 */
enum ArmStatus arm_albino_map(size_t height,
                              size_t width,
                              const struct ArmLayer *layers,
                              size_t count,
                              struct ArmTensor **out);

/**
 * Largest `r` with `r²` dividing `channels`.
 */
size_t arm_max_shuffle_ratio(size_t channels);

/**
 * Head for a `channels×height×width` backbone output, sized like the reference network.
 *
 * # Safety
 * `out` must be writable.
 */
enum ArmStatus arm_head_new(size_t channels,
                            size_t height,
                            size_t width,
                            size_t classes,
                            uint64_t seed,
                            struct ArmHeadHandle **out);

/**
 * # Safety
 * `h` must come from this library and not be freed twice.
 */
void arm_head_free(struct ArmHeadHandle *h);

/**
 * Trainable parameter count, or 0 for null.
 *
 * # Safety
 * `h` must be a live head or null.
 */
size_t arm_head_param_count(const struct ArmHeadHandle *h);

/**
 * Logits `N×K`. Training mode updates the affinity buffer and batch-norm statistics;
 * evaluation mode needs a buffer from an earlier training-mode call.
 *
 * # Safety
 * `h` must be a live head and `x` a live tensor.
 */
enum ArmStatus arm_head_forward(struct ArmHeadHandle *h,
                                const struct ArmTensor *x,
                                bool train,
                                struct ArmTensor **out);

/**
 * WA and UA of a row-major `classes×classes` confusion matrix (rows are true classes).
 *
 * # Safety
 * `counts` must hold `classes²` values; `out` must be writable.
 */
enum ArmStatus arm_metrics(const uint64_t *counts, size_t classes, struct ArmMetrics *out);

/**
 * One balanced epoch over classes of the given sizes. Samples are numbered class by
 * class: class 0 owns `0..counts[0]`, class 1 the next `counts[1]`, and so on.
 *
 * `len` receives the epoch length. With a null `indices` only the length is reported;
 * otherwise `capacity` must be at least that length.
 *
 * # Safety
 * `counts` must hold `classes` values; `indices` must be writable for `capacity` values.
 */
enum ArmStatus arm_mrr_sample(const size_t *counts,
                              size_t classes,
                              uint64_t seed,
                              size_t *indices,
                              size_t capacity,
                              size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARM_LAB_H */
