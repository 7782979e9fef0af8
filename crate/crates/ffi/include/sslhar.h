#ifndef SSLHAR_H
#define SSLHAR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define SSLHAR_WINDOW_LEN 128

#define SSLHAR_CHANNELS 6

#define SSLHAR_WINDOW_VALUES 768

typedef enum SslharStatus {
  SSLHAR_STATUS_OK = 0,
  SSLHAR_STATUS_NULL_POINTER = 1,
  SSLHAR_STATUS_INVALID_ARGUMENT = 2,
  SSLHAR_STATUS_IO = 3,
  SSLHAR_STATUS_CHECKPOINT = 4,
  SSLHAR_STATUS_SHAPE = 5,
  SSLHAR_STATUS_NO_CLASSIFIER = 6,
  SSLHAR_STATUS_BUFFER_TOO_SMALL = 7,
  SSLHAR_STATUS_INTERNAL = 8,
} SslharStatus;

/**
 * A loaded checkpoint: an encoder, optionally with a fine-tuned head.
 */
typedef struct SslharModel SslharModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sslhar_version(void);

/**
 * Length in bytes of the last error message of this thread, excluding the
 * terminating NUL; 0 when the last call succeeded.
 */
size_t sslhar_last_error_length(void);

/**
 * Copy the last error message into `buf` (NUL-terminated, truncated to fit).
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum SslharStatus sslhar_last_error_message(char *buf, size_t len);

/**
 * Load the checkpoint directory `dir` into a new model handle.
 *
 * # Safety
 * `dir` must be a NUL-terminated UTF-8 path and `out` a valid pointer.
 */
enum SslharStatus sslhar_model_load(const char *dir, struct SslharModel **out);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`sslhar_model_load`] and not be used afterwards.
 */
void sslhar_model_free(struct SslharModel *model);

/**
 * Width of the pooled embedding.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum SslharStatus sslhar_model_embedding_width(const struct SslharModel *model, size_t *out);

/**
 * Total number of array elements in the checkpoint.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum SslharStatus sslhar_model_param_count(const struct SslharModel *model, size_t *out);

/**
 * Number of classes of the fine-tuned head; 0 for a bare encoder.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum SslharStatus sslhar_model_class_count(const struct SslharModel *model, size_t *out);

/**
 * Pooled embeddings of `n_windows` windows into `out` (`n_windows * width`
 * doubles, row-major).
 *
 * # Safety
 * `windows` must hold `n_windows * SSLHAR_WINDOW_VALUES` doubles and `out`
 * must hold `out_len` doubles.
 */
enum SslharStatus sslhar_model_embed(const struct SslharModel *model,
                                     const double *windows,
                                     size_t n_windows,
                                     double *out,
                                     size_t out_len);

/**
 * Unified class ids predicted by the fine-tuned head, one per window.
 *
 * # Safety
 * `windows` must hold `n_windows * SSLHAR_WINDOW_VALUES` doubles and `out`
 * must hold `out_len` bytes.
 */
enum SslharStatus sslhar_model_predict(const struct SslharModel *model,
                                       const double *windows,
                                       size_t n_windows,
                                       uint8_t *out,
                                       size_t out_len);

/**
 * Macro F1 over the classes present in `labels`.
 *
 * # Safety
 * `preds` and `labels` must hold `n` values and `out` must be valid.
 */
enum SslharStatus sslhar_macro_f1(const size_t *preds,
                                  const size_t *labels,
                                  size_t n,
                                  size_t n_classes,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSLHAR_H */
