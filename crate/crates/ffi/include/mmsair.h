/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef MMSAIR_H
#define MMSAIR_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  MMS_STATUS_OK = 0,
  MMS_STATUS_NULL_POINTER = 1,
  MMS_STATUS_INVALID_UTF8 = 2,
  MMS_STATUS_IO = 3,
  MMS_STATUS_FORMAT = 4,
  MMS_STATUS_INVALID_ARGUMENT = 5,
  MMS_STATUS_DATASET = 6,
  MMS_STATUS_MISSING_INPUT = 7,
  MMS_STATUS_NUMERIC = 8,
  MMS_STATUS_PANIC = 9,
} MmsStatus;

/**
 * A loaded, validated dataset.
 */
typedef struct MmsDataset MmsDataset;

/**
 * A trained or loaded model together with its training configuration.
 */
typedef struct MmsModel MmsModel;

/**
 * Where encoder inputs come from. Every field may be null. A null
 * `thumbnail_dir` means the dataset's own directory.
 */
typedef struct {
  const char *thumbnail_dir;
  const char *context_store;
  const char *sticker_text_store;
  const char *image_store;
} MmsProviderPaths;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Do not free.
 */
const char *mms_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread. Do not free.
 */
const char *mms_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void mms_string_free(char *s);

/**
 * Loads a JSONL dataset.
 *
 * `field_map` (nullable) overrides source keys, e.g. `"context=text"`.
 * With `lenient` set, class/text rule violations are logged, not fatal.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
MmsStatus mms_dataset_load(const char *path, const char *field_map, bool lenient, MmsDataset **out);

/**
 * # Safety
 * `ds` must be a live dataset handle; `out_len` must be writable.
 */
MmsStatus mms_dataset_len(const MmsDataset *ds, uintptr_t *out_len);

/**
 * Label statistics as a JSON string.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out_json` must be writable.
 */
MmsStatus mms_dataset_stats_json(const MmsDataset *ds, char **out_json);

/**
 * # Safety
 * `ds` must be null or a dataset handle not yet freed.
 */
void mms_dataset_free(MmsDataset *ds);

/**
 * Trains a model.
 *
 * `test` (nullable) enables per-epoch test scores in the log.
 * `config_toml` (nullable) holds training options; unset keys keep their defaults.
 * `paths` (nullable) locates thumbnails and embedding stores.
 * `out_log_jsonl` (nullable) receives the epoch log.
 *
 * # Safety
 * Handles must be live; strings NUL-terminated; out pointers writable.
 */
MmsStatus mms_train(const MmsDataset *train,
                    const MmsDataset *test,
                    const char *config_toml,
                    const MmsProviderPaths *paths,
                    MmsModel **out_model,
                    char **out_log_jsonl);

/**
 * Writes the model (and optimizer state, if any) as a checkpoint file.
 *
 * # Safety
 * `model` must be live; `path` NUL-terminated.
 */
MmsStatus mms_model_save(const MmsModel *model, const char *path);

/**
 * # Safety
 * `path` NUL-terminated; `out_model` writable.
 */
MmsStatus mms_model_load(const char *path, MmsModel **out_model);

/**
 * # Safety
 * `model` must be null or a model handle not yet freed.
 */
void mms_model_free(MmsModel *model);

/**
 * Evaluates `model` on `ds`; writes the metrics report as JSON.
 *
 * # Safety
 * Handles must be live; `paths` null or valid; `out_json` writable.
 */
MmsStatus mms_evaluate_json(const MmsModel *model,
                            const MmsDataset *ds,
                            const MmsProviderPaths *paths,
                            char **out_json);

/**
 * Full-pipeline gradient check with toy encoders over seeds `0..seeds`;
 * writes the largest relative error seen.
 *
 * # Safety
 * `out_max_rel_error` must be writable.
 */
MmsStatus mms_gradcheck(uint32_t seeds, double *out_max_rel_error);

/**
 * Reads an embedding store and reports its header fields.
 * `out_modality` receives 0 (context), 1 (sticker text) or 2 (sticker image).
 *
 * # Safety
 * `path` NUL-terminated; out pointers writable.
 */
MmsStatus mms_store_info(const char *path,
                         uint8_t *out_modality,
                         uint32_t *out_width,
                         uint64_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMSAIR_H */
