#ifndef TADET_H
#define TADET_H

/* Generated by cbindgen from the tadet-capi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * `noun` value reported for single-vocabulary labels, which have no noun.
 */
#define TAD_NO_NOUN UINT32_MAX

/**
 * Score-fusion mode for combining action and boundary probabilities.
 */
typedef enum TadFusionMode {
  TAD_FUSION_MODE_CLS_SQRT_SE = 0,
  TAD_FUSION_MODE_BOUNDARY_ONLY = 1,
  TAD_FUSION_MODE_CLS_ONLY = 2,
  TAD_FUSION_MODE_CLS_S = 3,
  TAD_FUSION_MODE_CLS_E = 4,
  TAD_FUSION_MODE_MEAN3 = 5,
  TAD_FUSION_MODE_PRODUCT3 = 6,
} TadFusionMode;

/**
 * Result code of a fallible call.
 */
typedef enum TadStatus {
  TAD_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  TAD_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument value was out of range or inconsistent.
   */
  TAD_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A file could not be read.
   */
  TAD_STATUS_IO = 3,
  /**
   * A file was read but its contents are invalid.
   */
  TAD_STATUS_MALFORMED = 4,
  /**
   * An unexpected internal failure; report as a bug.
   */
  TAD_STATUS_INTERNAL = 5,
} TadStatus;

/**
 * Decoded detections for one sequence (opaque).
 */
typedef struct TadDetections TadDetections;

/**
 * A loaded model (opaque).
 */
typedef struct TadModel TadModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread (empty if none).
 * The pointer stays valid until the next API call on the same thread.
 */
const char *tad_last_error(void);

/**
 * Temporal IoU of `[a_start, a_end]` and `[b_start, b_end]`.
 * NaN if either interval is invalid (non-finite or end < start).
 */
double tad_tiou(double a_start, double a_end, double b_start, double b_end);

/**
 * Generalized IoU of two intervals (in [-1, 1]). NaN on invalid input.
 */
double tad_giou(double a_start, double a_end, double b_start, double b_end);

/**
 * Gaussian confidence scaling of a boundary token: exp(-token^2 / (2 sigma^2)).
 * NaN if `sigma` is not a positive finite number.
 */
double tad_confidence_scale(double token, double sigma);

/**
 * Fuse an action probability with start/end boundary confidences.
 * NaN on non-finite input.
 */
double tad_fuse_scores(enum TadFusionMode mode, double p_action, double p_start, double p_end);

/**
 * Class-aware Soft-NMS over parallel arrays of `count` proposals.
 *
 * Kept proposals are written to the `out_*` arrays (each with capacity for
 * at least `count` elements) in ranking order, scores already decayed, and
 * their number to `out_count` (at most `max_keep`). Proposals only suppress
 * others with the same label.
 */
enum TadStatus tad_soft_nms(const double *starts,
                            const double *ends,
                            const uint32_t *labels,
                            const double *scores,
                            size_t count,
                            double decay_sigma,
                            double score_floor,
                            size_t max_keep,
                            double *out_starts,
                            double *out_ends,
                            uint32_t *out_labels,
                            double *out_scores,
                            size_t *out_count);

/**
 * Load a model checkpoint; on success `*out` owns the handle.
 */
enum TadStatus tad_model_load(const char *ckpt_path, struct TadModel **out);

void tad_model_free(struct TadModel *model);

/**
 * Feature dimension the model was trained on.
 */
uint32_t tad_model_feature_dim(const struct TadModel *model);

/**
 * Width of the model's classification output (classes, or verbs + nouns).
 */
uint32_t tad_model_class_width(const struct TadModel *model);

/**
 * Run the model over one feature-pyramid file and decode detections.
 *
 * `frame_rate` converts the file's level-0 grid to seconds; `sigma` is the
 * confidence-scaling width; everything else uses default decode settings
 * with the given fusion mode. On success `*out` owns the detections.
 */
enum TadStatus tad_detect_file(const struct TadModel *model,
                               const char *features_path,
                               double frame_rate,
                               enum TadFusionMode fusion,
                               double sigma,
                               struct TadDetections **out);

/**
 * Number of detections in the handle (0 for null).
 */
size_t tad_detections_count(const struct TadDetections *dets);

/**
 * Read one detection. For single-vocabulary models `*out_verb` is the class
 * id and `*out_noun` is `TAD_NO_NOUN`. Null output pointers are skipped.
 */
enum TadStatus tad_detections_get(const struct TadDetections *dets,
                                  size_t index,
                                  double *out_start,
                                  double *out_end,
                                  uint32_t *out_verb,
                                  uint32_t *out_noun,
                                  double *out_score);

void tad_detections_free(struct TadDetections *dets);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TADET_H */
