#ifndef COVSTREAM_H
#define COVSTREAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Codes 1 to 3 match the CLI exit codes.
 */
typedef enum CovstreamStatus {
  COVSTREAM_STATUS_OK = 0,
  /**
   * An argument value is out of range.
   */
  COVSTREAM_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Malformed or inconsistent input data.
   */
  COVSTREAM_STATUS_DATA_ERROR = 2,
  /**
   * A factorization or update recurrence failed.
   */
  COVSTREAM_STATUS_NUMERICAL_ERROR = 3,
  COVSTREAM_STATUS_NULL_POINTER = 4,
  /**
   * An internal panic was caught at the boundary.
   */
  COVSTREAM_STATUS_INTERNAL = 5,
} CovstreamStatus;

typedef enum CovstreamEventKind {
  COVSTREAM_EVENT_KIND_INITIAL_DECISION = 0,
  COVSTREAM_EVENT_KIND_CONTINUATION = 1,
  COVSTREAM_EVENT_KIND_BOUNDARY = 2,
} CovstreamEventKind;

/**
 * Weighted covariance of a feature stream.
 */
typedef struct CovstreamCovariance CovstreamCovariance;

/**
 * A trained model together with the state of one stream.
 */
typedef struct CovstreamRecognizer CovstreamRecognizer;

typedef struct CovstreamEvent {
  size_t frame_index;
  uint32_t label;
  enum CovstreamEventKind kind;
} CovstreamEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the last failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *covstream_last_error(void);

/**
 * Stein divergence between two row-major `dim x dim` SPD matrices.
 *
 * # Safety
 * `x` and `y` must point to `dim * dim` doubles; `out` must be writable.
 */
enum CovstreamStatus covstream_stein_divergence(const double *x,
                                                const double *y,
                                                size_t dim,
                                                double *out);

/**
 * Starts a weighted covariance from `frames` row-major feature vectors of
 * length `dim`. `weights` may be NULL for unit frame weights.
 *
 * # Safety
 * `features` must point to `frames * dim` doubles and `weights`, when not
 * NULL, to `frames` doubles. `out` must be writable.
 */
enum CovstreamStatus covstream_covariance_new(const double *features,
                                              const double *weights,
                                              size_t frames,
                                              size_t dim,
                                              double decay,
                                              struct CovstreamCovariance **out);

/**
 * Folds one frame into the covariance.
 *
 * # Safety
 * `handle` must come from [`covstream_covariance_new`]; `feature` must
 * point to `dim` doubles.
 */
enum CovstreamStatus covstream_covariance_update(struct CovstreamCovariance *handle,
                                                 const double *feature,
                                                 size_t dim,
                                                 double weight);

/**
 * Feature dimension of the covariance, or 0 for NULL.
 *
 * # Safety
 * `handle` must be NULL or come from [`covstream_covariance_new`].
 */
size_t covstream_covariance_dim(const struct CovstreamCovariance *handle);

/**
 * Frames folded in so far, or 0 for NULL.
 *
 * # Safety
 * `handle` must be NULL or come from [`covstream_covariance_new`].
 */
size_t covstream_covariance_frame_count(const struct CovstreamCovariance *handle);

/**
 * Copies the row-major covariance (`dim * dim`) and the mean (`dim`).
 * Either output may be NULL.
 *
 * # Safety
 * Non-NULL outputs must have room for the sizes above.
 */
enum CovstreamStatus covstream_covariance_read(const struct CovstreamCovariance *handle,
                                               double *cov_out,
                                               double *mean_out);

/**
 * # Safety
 * `handle` must be NULL or come from [`covstream_covariance_new`] and not
 * be used afterwards.
 */
void covstream_covariance_free(struct CovstreamCovariance *handle);

/**
 * Loads a model file written by `covstream train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CovstreamStatus covstream_recognizer_load(const char *path, struct CovstreamRecognizer **out);

/**
 * Joints per frame expected by the model, or 0 for NULL.
 *
 * # Safety
 * `handle` must be NULL or come from [`covstream_recognizer_load`].
 */
size_t covstream_recognizer_joint_count(const struct CovstreamRecognizer *handle);

/**
 * Number of classes, or 0 for NULL.
 *
 * # Safety
 * `handle` must be NULL or come from [`covstream_recognizer_load`].
 */
size_t covstream_recognizer_class_count(const struct CovstreamRecognizer *handle);

/**
 * Writes up to `capacity` class labels in ascending order and returns the
 * class count.
 *
 * # Safety
 * `labels` must have room for `capacity` values.
 */
size_t covstream_recognizer_labels(const struct CovstreamRecognizer *handle,
                                   uint32_t *labels,
                                   size_t capacity);

/**
 * Re-initializes the covariance at each detected boundary.
 *
 * # Safety
 * `handle` must come from [`covstream_recognizer_load`].
 */
enum CovstreamStatus covstream_recognizer_set_reset_on_boundary(struct CovstreamRecognizer *handle,
                                                                bool enabled);

/**
 * Feeds one frame of `joint_count` xyz triples. `*has_event` is set to 1
 * and `*event` filled when the frame produced a decision, else 0.
 *
 * # Safety
 * `joints` must point to `3 * joint_count` doubles; `event` and
 * `has_event` must be writable.
 */
enum CovstreamStatus covstream_recognizer_push_frame(struct CovstreamRecognizer *handle,
                                                     const double *joints,
                                                     size_t joint_count,
                                                     struct CovstreamEvent *event,
                                                     int32_t *has_event);

/**
 * Forgets the stream seen so far.
 *
 * # Safety
 * `handle` must come from [`covstream_recognizer_load`].
 */
enum CovstreamStatus covstream_recognizer_reset(struct CovstreamRecognizer *handle);

/**
 * # Safety
 * `handle` must be NULL or come from [`covstream_recognizer_load`] and not
 * be used afterwards.
 */
void covstream_recognizer_free(struct CovstreamRecognizer *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COVSTREAM_H */
