#ifndef PARTLENS_H
#define PARTLENS_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum PlStatus {
  PL_STATUS_OK = 0,
  PL_STATUS_NULL_POINTER = 1,
  PL_STATUS_USAGE = 2,
  PL_STATUS_SHAPE = 3,
  PL_STATUS_PARAM = 4,
  PL_STATUS_NUMERIC = 5,
  PL_STATUS_FORMAT = 6,
  PL_STATUS_DATA = 7,
  PL_STATUS_ENCODER = 8,
  PL_STATUS_IO = 9,
  PL_STATUS_PANIC = 10,
} PlStatus;

/**
 * Embeddings of one batch.
 */
typedef struct PlBatch PlBatch;

/**
 * A toy encoder with the phrase-slot count used at evaluation.
 */
typedef struct PlModel PlModel;

/**
 * A synthetic scene collection.
 */
typedef struct PlWorld PlWorld;

/**
 * Five retrieval metrics as fractions in `[0, 1]`.
 */
typedef struct PlMetrics {
  double r1;
  double r5;
  double r10;
  double map;
  double minp;
} PlMetrics;

/**
 * Hyperparameters of the part and coverage losses.
 */
typedef struct PlLossConfig {
  double tau_part;
  double tau_tal;
  double margin_tal;
  double lambda_part;
  double lambda_cov;
  uint32_t warmup_epochs;
} PlLossConfig;

/**
 * Value and components of `L_part + λ_cov·L_cov` at full warm-up.
 */
typedef struct PlLossValue {
  double total;
  double part;
  double coverage;
} PlLossValue;

/**
 * Outcome of one counterfactual evaluation. `delta_pct` follows the
 * order R@1, R@5, R@10, mAP, mINP; `delta_pct_defined[m]` is zero when the
 * baseline of metric `m` is zero and the relative drop is undefined.
 */
typedef struct PlCounterfactual {
  struct PlMetrics baseline;
  struct PlMetrics counterfactual;
  double delta_pct[5];
  uint8_t delta_pct_defined[5];
  /**
   * Number of gallery cells whose score changed.
   */
  size_t changed_cells;
} PlCounterfactual;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *pl_last_error_message(void);

/**
 * Static NUL-terminated version string.
 */
const char *pl_version(void);

/**
 * Ranks each gallery row by descending score (lower index first on ties)
 * and scores it against the relevance labels. Queries without a relevant
 * item are skipped; a matrix with none is a `PL_STATUS_DATA` error.
 */
enum PlStatus pl_metrics_evaluate(const double *scores,
                                  const uint8_t *relevant,
                                  size_t queries,
                                  size_t gallery,
                                  struct PlMetrics *out);

struct PlLossConfig pl_loss_config_default(void);

/**
 * Builds a batch from row-major arrays: `global_image` and `global_text`
 * are B×D, `patches` is B×K×D with K = grid_h·grid_w, `phrases` is B×P×D
 * and `phrase_mask` is B×P.
 */
enum PlStatus pl_batch_create(size_t batch,
                              size_t grid_h,
                              size_t grid_w,
                              size_t phrases,
                              size_t dim,
                              const double *global_image,
                              const double *global_text,
                              const double *patch_data,
                              const double *phrase_data,
                              const uint8_t *phrase_mask,
                              const int32_t *identities,
                              struct PlBatch **out);

/**
 * Reads an embeddings file written by the command-line tool.
 */
enum PlStatus pl_batch_load(const char *path, struct PlBatch **out);

void pl_batch_free(struct PlBatch *batch);

size_t pl_batch_size(const struct PlBatch *batch);

/**
 * Evaluates the part and coverage losses. When `grad_patches` or
 * `grad_phrases` is non-null it receives the gradient in the layout
 * used by [`pl_batch_create`].
 */
enum PlStatus pl_batch_part_loss(const struct PlBatch *batch,
                                 const struct PlLossConfig *config,
                                 struct PlLossValue *out,
                                 double *grad_patches,
                                 double *grad_phrases);

enum PlStatus pl_world_generate(size_t identities,
                                size_t samples_per_identity,
                                size_t grid_h,
                                size_t grid_w,
                                size_t image_h,
                                size_t image_w,
                                uint64_t seed,
                                struct PlWorld **out);

enum PlStatus pl_world_load(const char *dir, struct PlWorld **out);

enum PlStatus pl_world_save(const struct PlWorld *world, const char *dir);

void pl_world_free(struct PlWorld *world);

size_t pl_world_len(const struct PlWorld *world);

/**
 * Trains on `world` with the default schedule, overriding the epoch
 * count and `λ_part`.
 */
enum PlStatus pl_model_train(const struct PlWorld *world,
                             uint32_t epochs,
                             double lambda_part,
                             uint64_t seed,
                             struct PlModel **out);

enum PlStatus pl_model_load(const char *path, struct PlModel **out);

enum PlStatus pl_model_save(const struct PlModel *model, const char *path);

void pl_model_free(struct PlModel *model);

/**
 * Runs the counterfactual protocol with every scene of `world` as both
 * a caption query and a gallery image.
 */
enum PlStatus pl_counterfactual(const struct PlModel *model,
                                const struct PlWorld *world,
                                double alpha,
                                double p,
                                struct PlCounterfactual *out);

/**
 * Mean relevance mass inside the true part rectangles, and the same
 * quantity for a uniform map.
 */
enum PlStatus pl_grounding(const struct PlModel *model,
                           const struct PlWorld *world,
                           double *mean,
                           double *uniform_mean);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARTLENS_H */
