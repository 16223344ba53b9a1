#ifndef MITOSEG_H
#define MITOSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum MitosegStatus {
  MITOSEG_STATUS_OK = 0,
  MITOSEG_STATUS_NULL_POINTER = 1,
  MITOSEG_STATUS_INVALID_ARGUMENT = 2,
  MITOSEG_STATUS_SHAPE = 3,
  MITOSEG_STATUS_CONFIG = 4,
  MITOSEG_STATUS_CONTRACT = 5,
  MITOSEG_STATUS_DATA = 6,
  MITOSEG_STATUS_NUMERIC = 7,
  MITOSEG_STATUS_INSUFFICIENT_TISSUE = 8,
  MITOSEG_STATUS_CHECKPOINT = 9,
  MITOSEG_STATUS_IO = 10,
  MITOSEG_STATUS_PANIC = 11,
} MitosegStatus;

/**
 * Candidate classifier loaded from a checkpoint.
 */
typedef struct MitosegClassModel MitosegClassModel;

/**
 * Detections of one image, sorted by descending score.
 */
typedef struct MitosegDetectionList MitosegDetectionList;

/**
 * Segmentation network loaded from a checkpoint.
 */
typedef struct MitosegSegModel MitosegSegModel;

typedef struct MitosegInferOptions {
  float seg_threshold;
  double class_threshold;
  size_t min_area;
  size_t crop_size;
  size_t tile_window;
  bool stage1_only;
  /**
   * Stain-normalize to the built-in reference profile first.
   */
  bool normalize;
} MitosegInferOptions;

typedef struct MitosegDetection {
  double x;
  double y;
  double score;
  size_t area;
} MitosegDetection;

typedef struct MitosegMetrics {
  size_t tp;
  size_t fp;
  size_t fn_;
  double precision;
  double recall;
  double f_score;
} MitosegMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *mitoseg_last_error(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *mitoseg_version(void);

struct MitosegInferOptions mitoseg_infer_options_default(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum MitosegStatus mitoseg_seg_model_load(const char *path, struct MitosegSegModel **out);

/**
 * # Safety
 * `model` must come from `mitoseg_seg_model_load` and not be freed twice.
 */
void mitoseg_seg_model_free(struct MitosegSegModel *model);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum MitosegStatus mitoseg_class_model_load(const char *path, struct MitosegClassModel **out);

/**
 * # Safety
 * `model` must come from `mitoseg_class_model_load` and not be freed twice.
 */
void mitoseg_class_model_free(struct MitosegClassModel *model);

/**
 * Two-stage detection on a `width` x `height` image of interleaved 8-bit
 * RGB rows, `stride` bytes apart (`stride >= 3 * width`). `cls` may be NULL
 * only when `opts->stage1_only` is set. `opts` may be NULL for defaults.
 *
 * # Safety
 * `rgb` must point to at least `stride * (height - 1) + 3 * width` bytes.
 * Model pointers must be live handles; `out` must be writable.
 */
enum MitosegStatus mitoseg_detect(const struct MitosegSegModel *seg,
                                  const struct MitosegClassModel *cls,
                                  const uint8_t *rgb,
                                  uint32_t width,
                                  uint32_t height,
                                  size_t stride,
                                  const struct MitosegInferOptions *opts,
                                  struct MitosegDetectionList **out);

/**
 * Number of detections; 0 for NULL.
 *
 * # Safety
 * `list` must be NULL or a live list.
 */
size_t mitoseg_detections_len(const struct MitosegDetectionList *list);

/**
 * Pointer to the first of `mitoseg_detections_len` contiguous detections,
 * owned by the list. NULL for NULL or empty lists.
 *
 * # Safety
 * `list` must be NULL or a live list.
 */
const struct MitosegDetection *mitoseg_detections_data(const struct MitosegDetectionList *list);

/**
 * # Safety
 * `list` must come from `mitoseg_detect` and not be freed twice.
 */
void mitoseg_detections_free(struct MitosegDetectionList *list);

/**
 * Matches `n_pred` predicted against `n_truth` true centroids (both as
 * `x0, y0, x1, y1, ...`) one-to-one within `radius` and fills `out`.
 *
 * # Safety
 * Each array must hold `2 * n` doubles (may be NULL when `n` is 0).
 */
enum MitosegStatus mitoseg_detection_metrics(const double *pred_xy,
                                             size_t n_pred,
                                             const double *truth_xy,
                                             size_t n_truth,
                                             double radius,
                                             struct MitosegMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MITOSEG_H */
