#ifndef SIGBLOCK_H
#define SIGBLOCK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum sb_status {
  SB_STATUS_OK = 0,
  SB_STATUS_NULL_POINTER = 1,
  SB_STATUS_INVALID_ARGUMENT = 2,
  SB_STATUS_IO = 3,
  SB_STATUS_FORMAT = 4,
  SB_STATUS_SCHEMA_MISMATCH = 5,
  SB_STATUS_CONFIG = 6,
  SB_STATUS_DATA = 7,
  SB_STATUS_PANIC = 8,
} sb_status;

/**
 * Candidate pairs, sorted by id.
 */
typedef struct sb_candidates sb_candidates;

/**
 * Loaded records.
 */
typedef struct sb_dataset sb_dataset;

/**
 * Trained signature model.
 */
typedef struct sb_model sb_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sb_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sb_version(void);

/**
 * Loads a single table (self-join mode). `right_path` may be null; when
 * given, the dataset is bipartite. `id_column` may be null for `id`.
 *
 * # Safety
 * String arguments must be NUL-terminated or null where allowed; `out`
 * must be writable.
 */
enum sb_status sb_dataset_load(const char *path,
                               const char *right_path,
                               const char *id_column,
                               struct sb_dataset **out_dataset);

/**
 * Number of records, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t sb_dataset_len(const struct sb_dataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void sb_dataset_free(struct sb_dataset *dataset);

/**
 * Reads a model file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out_model` writable.
 */
enum sb_status sb_model_load(const char *path, struct sb_model **out_model);

/**
 * Trains on `dataset` with the labeled pairs in `labels_path`.
 * `config_toml` holds a run configuration in TOML, or null for defaults.
 *
 * # Safety
 * Handles must be live; strings NUL-terminated or null where allowed.
 */
enum sb_status sb_model_train(const struct sb_dataset *dataset,
                              const char *labels_path,
                              const char *config_toml,
                              struct sb_model **out_model);

/**
 * # Safety
 * `model` must be live; `path` NUL-terminated.
 */
enum sb_status sb_model_save(const struct sb_model *model, const char *path);

/**
 * Number of learned signatures, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or live.
 */
size_t sb_model_signature_count(const struct sb_model *model);

/**
 * Maximum signature cosine between records `i` and `j` of `dataset`.
 *
 * # Safety
 * Handles must be live; `out_similarity` writable.
 */
enum sb_status sb_model_similarity(const struct sb_model *model,
                                   const struct sb_dataset *dataset,
                                   size_t i,
                                   size_t j,
                                   double *out_similarity);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void sb_model_free(struct sb_model *model);

/**
 * Candidate pairs at cosine threshold `theta` (0 < theta < 1) with the
 * default index parameters. `max_results` of 0 selects the default cap.
 *
 * # Safety
 * Handles must be live; `out_candidates` writable.
 */
enum sb_status sb_block(const struct sb_model *model,
                        const struct sb_dataset *dataset,
                        double theta,
                        size_t max_results,
                        struct sb_candidates **out_candidates);

/**
 * # Safety
 * `candidates` must be null or live.
 */
size_t sb_candidates_len(const struct sb_candidates *candidates);

/**
 * Pair `index`. The id strings belong to the handle and live until it is
 * freed. `signature` is -1 and `cosine` NaN when provenance is unknown.
 *
 * # Safety
 * `candidates` must be live; out pointers writable.
 */
enum sb_status sb_candidates_get(const struct sb_candidates *candidates,
                                 size_t index,
                                 const char **out_id_a,
                                 const char **out_id_b,
                                 int32_t *out_signature,
                                 double *out_cosine);

/**
 * Writes the pairs as CSV (`id_a,id_b,signature_id,cosine`).
 *
 * # Safety
 * `candidates` must be live; `path` NUL-terminated.
 */
enum sb_status sb_candidates_write_csv(const struct sb_candidates *candidates, const char *path);

/**
 * # Safety
 * `candidates` must be null or a handle not yet freed.
 */
void sb_candidates_free(struct sb_candidates *candidates);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIGBLOCK_H */
