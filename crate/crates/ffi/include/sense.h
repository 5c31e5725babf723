#ifndef SENSE_H
#define SENSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SenseStatus {
  SENSE_STATUS_OK = 0,
  SENSE_STATUS_NULL_POINTER = 1,
  SENSE_STATUS_INVALID_UTF8 = 2,
  SENSE_STATUS_CONFIG = 3,
  SENSE_STATUS_IO = 4,
  SENSE_STATUS_PARSE = 5,
  SENSE_STATUS_SHAPE = 6,
  SENSE_STATUS_DOMAIN = 7,
  SENSE_STATUS_STATE = 8,
  SENSE_STATUS_INPUT = 9,
  SENSE_STATUS_NON_FINITE = 10,
  SENSE_STATUS_BUFFER_TOO_SMALL = 11,
  SENSE_STATUS_PANIC = 12,
} SenseStatus;

/**
 * Opaque model handle.
 */
typedef struct SenseModel SenseModel;

/**
 * Opaque embedding store handle.
 */
typedef struct SenseStore SenseStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *sense_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sense_version(void);

/**
 * Load a model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SenseStatus sense_model_load(const char *path, struct SenseModel **out);

/**
 * Freshly initialized model; `d_a = 0` uses `d_h`.
 *
 * # Safety
 * `out` must be writable.
 */
enum SenseStatus sense_model_init(size_t d_in,
                                  size_t d_h,
                                  size_t d_a,
                                  size_t d_e,
                                  uint64_t seed,
                                  struct SenseModel **out);

/**
 * # Safety
 * `model` must be a valid handle; `path` a NUL-terminated string.
 */
enum SenseStatus sense_model_save(const struct SenseModel *model, const char *path);

/**
 * Write `(d_in, d_h, d_a, d_e)`; any output pointer may be null.
 *
 * # Safety
 * `model` must be a valid handle; non-null outputs must be writable.
 */
enum SenseStatus sense_model_dims(const struct SenseModel *model,
                                  size_t *d_in,
                                  size_t *d_h,
                                  size_t *d_a,
                                  size_t *d_e);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void sense_model_free(struct SenseModel *model);

/**
 * Embed `t` row-major frames of width `d_in` into `out` (`out_len = d_e`).
 * If `attention_out` is non-null it receives the `t` attention weights.
 *
 * # Safety
 * `frames` must hold `t * d_in` doubles, `out` `out_len` doubles and a
 * non-null `attention_out` `t` doubles.
 */
enum SenseStatus sense_model_embed(const struct SenseModel *model,
                                   const double *frames,
                                   size_t t,
                                   size_t d_in,
                                   double *out,
                                   size_t out_len,
                                   double *attention_out);

/**
 * Load a store file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SenseStatus sense_store_load(const char *path, struct SenseStore **out);

/**
 * # Safety
 * `store` must be null or a handle not yet freed.
 */
void sense_store_free(struct SenseStore *store);

/**
 * Number of entries; 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a valid handle.
 */
size_t sense_store_len(const struct SenseStore *store);

/**
 * Vector dimension; 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a valid handle.
 */
size_t sense_store_dim(const struct SenseStore *store);

/**
 * New handle holding a mean-centered copy of `store`.
 *
 * # Safety
 * `store` must be a valid handle; `out` must be writable.
 */
enum SenseStatus sense_store_mean_center(const struct SenseStore *store, struct SenseStore **out);

/**
 * Copy the id of entry `index` into `buf` as a NUL-terminated string.
 * `needed` (if non-null) receives the buffer size required, including the
 * terminator.
 *
 * # Safety
 * `store` must be a valid handle; `buf` must hold `buf_len` bytes.
 */
enum SenseStatus sense_store_id(const struct SenseStore *store,
                                size_t index,
                                char *buf,
                                size_t buf_len,
                                size_t *needed);

/**
 * Exact cosine top-`k` of `query` (length `dim`). Writes up to `k` entry
 * indices and scores, best first, and the number written to `count`.
 *
 * # Safety
 * `query` must hold `dim` doubles; `indices` and `scores` `k` elements each.
 */
enum SenseStatus sense_store_top_k(const struct SenseStore *store,
                                   const double *query,
                                   size_t dim,
                                   size_t k,
                                   size_t *indices,
                                   double *scores,
                                   size_t *count);

/**
 * `1 - cos(s, t)` for two vectors of length `n`.
 *
 * # Safety
 * `s` and `t` must hold `n` doubles; `out` must be writable.
 */
enum SenseStatus sense_cosine_loss(const double *s, const double *t, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SENSE_H */
