#ifndef STEALKIT_H
#define STEALKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SkStatus {
  SK_STATUS_OK = 0,
  SK_STATUS_NULL_POINTER = 1,
  SK_STATUS_REJECTED_INPUT = 2,
  SK_STATUS_REJECTED_CONFIG = 3,
  SK_STATUS_BUDGET_EXHAUSTED = 4,
  SK_STATUS_TRAINING_DIVERGED = 5,
  SK_STATUS_ATTACK_FAILED = 6,
  SK_STATUS_REMOTE_UNAVAILABLE = 7,
  SK_STATUS_REMOTE_INTERNAL = 8,
  SK_STATUS_IO = 9,
  SK_STATUS_FORMAT = 10,
  SK_STATUS_PANIC = 11,
} SkStatus;

/**
 * A trained classifier.
 */
typedef struct SkModel SkModel;

/**
 * A budgeted hard-label victim, local or remote.
 */
typedef struct SkOracle SkOracle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length in
 * bytes, or 0 if there is none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sk_last_error_message(char *buf, size_t len);

/**
 * Shannon entropy (natural log) of a probability vector.
 *
 * # Safety
 * `p` must point to `n` doubles and `out` to one writable double.
 */
enum SkStatus sk_entropy(const double *p, size_t n, double *out);

/**
 * Entropy of the class-frequency vector of `k` member labels.
 *
 * # Safety
 * `labels` must point to `k` values and `out` to one writable double.
 */
enum SkStatus sk_disagreement_entropy(const size_t *labels,
                                      size_t k,
                                      size_t num_classes,
                                      double *out);

/**
 * Majority vote over `k` member labels, falling back to the argmax of the
 * `num_classes`-long consensus distribution when no strict majority exists.
 *
 * # Safety
 * `labels` must point to `k` values, `consensus` to `num_classes` doubles
 * and `out` to one writable value.
 */
enum SkStatus sk_majority_vote(const size_t *labels,
                               size_t k,
                               const double *consensus,
                               size_t num_classes,
                               size_t *out);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum SkStatus sk_model_load(const char *path, struct SkModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`sk_model_load`] and not be used afterwards.
 */
void sk_model_free(struct SkModel *model);

/**
 * Input dimension of a model, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sk_model_input_dim(const struct SkModel *model);

/**
 * Number of classes of a model, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sk_model_num_classes(const struct SkModel *model);

/**
 * Predicted class of one input row of length `dim`.
 *
 * # Safety
 * `model` must be a live handle, `x` must point to `dim` doubles and
 * `label` must be writable.
 */
enum SkStatus sk_model_predict(const struct SkModel *model,
                               const double *x,
                               size_t dim,
                               size_t *label);

/**
 * Softmax probabilities of one row, written to `probs` (`num_classes` long).
 *
 * # Safety
 * `model` must be a live handle, `x` must point to `dim` doubles and
 * `probs` to `num_classes` writable doubles.
 */
enum SkStatus sk_model_probs(const struct SkModel *model,
                             const double *x,
                             size_t dim,
                             double *probs,
                             size_t num_classes);

/**
 * An in-process oracle around a copy of `model` with `budget` queries.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SkStatus sk_oracle_local(const struct SkModel *model, size_t budget, struct SkOracle **out);

/**
 * An oracle backed by a running victim service at `endpoint`
 * (`host:port`), with a client-side budget of `budget` queries.
 *
 * # Safety
 * `endpoint` must be a NUL-terminated string and `out` writable.
 */
enum SkStatus sk_oracle_connect(const char *endpoint, size_t budget, struct SkOracle **out);

/**
 * Releases an oracle. Null is ignored.
 *
 * # Safety
 * `oracle` must come from an `sk_oracle_*` constructor and not be used
 * afterwards.
 */
void sk_oracle_free(struct SkOracle *oracle);

/**
 * Remaining budget, or 0 for null.
 *
 * # Safety
 * `oracle` must be null or a live handle.
 */
size_t sk_oracle_remaining(const struct SkOracle *oracle);

/**
 * Labels `n_rows` row-major rows of width `dim`, charging one query each.
 * All or nothing: an over-budget request labels nothing.
 *
 * # Safety
 * `oracle` must be a live handle, `rows` must point to `n_rows * dim`
 * doubles and `labels` to `n_rows` writable values.
 */
enum SkStatus sk_oracle_query(struct SkOracle *oracle,
                              const double *rows,
                              size_t n_rows,
                              size_t dim,
                              size_t *labels);

/**
 * Runs a full attack from a JSON experiment configuration. When
 * `out_dir` is non-null it overrides the configured output directory.
 * On success `*summary_json` receives the report as JSON, to be released
 * with [`sk_string_free`].
 *
 * # Safety
 * `config_json` must be a NUL-terminated string, `out_dir` null or
 * NUL-terminated, and `summary_json` writable.
 */
enum SkStatus sk_run_attack(const char *config_json, const char *out_dir, char **summary_json);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void sk_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEALKIT_H */
