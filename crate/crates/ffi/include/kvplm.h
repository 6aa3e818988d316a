#ifndef KVPLM_H
#define KVPLM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum KvplmStatus {
  KVPLM_STATUS_OK = 0,
  KVPLM_STATUS_NULL_POINTER = 1,
  KVPLM_STATUS_INVALID_ARGUMENT = 2,
  KVPLM_STATUS_CONFIG = 3,
  KVPLM_STATUS_IO = 4,
  KVPLM_STATUS_FORMAT = 5,
  KVPLM_STATUS_SHAPE = 6,
  KVPLM_STATUS_INSUFFICIENT_DATA = 7,
  KVPLM_STATUS_NON_FINITE = 8,
  KVPLM_STATUS_UNSUPPORTED = 9,
  KVPLM_STATUS_PANIC = 10,
} KvplmStatus;

/**
 * Model variant codes accepted by the constructors.
 */
typedef enum KvplmVariant {
  KVPLM_VARIANT_LSTM = 0,
  KVPLM_VARIANT_ATTENTION = 1,
  KVPLM_VARIANT_KEY_VALUE = 2,
  KVPLM_VARIANT_KEY_VALUE_PREDICT = 3,
  KVPLM_VARIANT_NGRAM = 4,
} KvplmVariant;

/**
 * Opaque model handle.
 */
typedef struct KvplmModel KvplmModel;

/**
 * Shape of a model. `variant` holds a [`KvplmVariant`] code; `window` is
 * ignored by non-attentive variants and `order` by everything except the
 * n-gram variant.
 */
typedef struct KvplmConfig {
  uint32_t variant;
  size_t embed_dim;
  size_t hidden;
  size_t window;
  size_t order;
  size_t vocab_size;
} KvplmConfig;

/**
 * Parameter counts; `model` leaves out the input embeddings.
 */
typedef struct KvplmParamCount {
  uint64_t model;
  uint64_t with_embeddings;
} KvplmParamCount;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null if the last call
 * succeeded. Valid until the next kvplm call on the same thread.
 */
const char *kvplm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *kvplm_version(void);

/**
 * Exact parameter counts for `config`.
 *
 * # Safety
 * `config` must be readable and `out_count` writable, or null.
 */
enum KvplmStatus kvplm_count_params(const struct KvplmConfig *config,
                                    struct KvplmParamCount *out_count);

/**
 * Hidden size whose model-parameter count is nearest `budget`; ties go to
 * the smaller size. `config.hidden` is ignored.
 *
 * # Safety
 * `config` must be readable and `out_hidden` writable, or null.
 */
enum KvplmStatus kvplm_match_hidden_size(const struct KvplmConfig *config,
                                         double budget,
                                         size_t *out_hidden);

/**
 * Fresh randomly initialised model.
 *
 * # Safety
 * `config` must be readable and `out_model` writable, or null.
 */
enum KvplmStatus kvplm_model_init(const struct KvplmConfig *config,
                                  uint64_t seed,
                                  struct KvplmModel **out_model);

/**
 * Loads a checkpoint written by the trainer.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_model` writable, or null.
 */
enum KvplmStatus kvplm_model_load(const char *path, struct KvplmModel **out_model);

/**
 * Writes `model` as a checkpoint.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum KvplmStatus kvplm_model_save(const struct KvplmModel *model, const char *path);

/**
 * Releases a model. Null is accepted.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void kvplm_model_free(struct KvplmModel *model);

/**
 * Copies the model's configuration.
 *
 * # Safety
 * `model` must come from this library and `out_config` be writable.
 */
enum KvplmStatus kvplm_model_config(const struct KvplmModel *model, struct KvplmConfig *out_config);

/**
 * Perplexity over token ids. `article_starts` lists the first index of each
 * article (it may be null when `n_starts` is 0, meaning one article).
 * Each article is scored from a fresh state.
 *
 * # Safety
 * `ids` must hold `len` values and `article_starts` `n_starts` values.
 */
enum KvplmStatus kvplm_model_perplexity(const struct KvplmModel *model,
                                        const uint32_t *ids,
                                        size_t len,
                                        const size_t *article_starts,
                                        size_t n_starts,
                                        size_t lanes,
                                        double *out_perplexity);

/**
 * Perplexity over an encoded corpus file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out_perplexity` writable.
 */
enum KvplmStatus kvplm_model_perplexity_file(const struct KvplmModel *model,
                                             const char *path,
                                             size_t lanes,
                                             double *out_perplexity);

/**
 * Mean attention weight per memory position, oldest first, written to
 * `out_weights` which must hold `window` values.
 *
 * # Safety
 * Same as [`kvplm_model_perplexity`]; `out_weights` must hold `capacity`
 * values.
 */
enum KvplmStatus kvplm_model_attention_profile(const struct KvplmModel *model,
                                               const uint32_t *ids,
                                               size_t len,
                                               const size_t *article_starts,
                                               size_t n_starts,
                                               size_t lanes,
                                               double *out_weights,
                                               size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KVPLM_H */
