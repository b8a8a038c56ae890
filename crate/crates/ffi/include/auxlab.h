#ifndef AUXLAB_H
#define AUXLAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AuxlabStatus {
  AUXLAB_STATUS_OK = 0,
  AUXLAB_STATUS_NULL_POINTER = 1,
  AUXLAB_STATUS_INVALID_ARGUMENT = 2,
  AUXLAB_STATUS_NOT_POSITIVE_DEFINITE = 3,
  AUXLAB_STATUS_ILL_CONDITIONED = 4,
  AUXLAB_STATUS_NON_FINITE = 5,
  AUXLAB_STATUS_DIVERGENCE = 6,
  AUXLAB_STATUS_IO = 7,
  /**
   * Some seeds of an experiment failed; the summary is still returned.
   */
  AUXLAB_STATUS_RUN_FAILED = 8,
  AUXLAB_STATUS_PANIC = 9,
} AuxlabStatus;

/**
 * A quadratic bilevel instance with its stored weights.
 */
typedef struct AuxlabQuadratic AuxlabQuadratic;

/**
 * Softmax task weights over `n` tasks, the end task first.
 */
typedef struct AuxlabTaskWeights AuxlabTaskWeights;

/**
 * Message of the last failure on this thread, empty after a success. The
 * pointer stays valid until the next auxlab call on the same thread.
 */
const char *auxlab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *auxlab_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void auxlab_string_free(char *s);

/**
 * Uniform weights over `n_tasks` tasks named `end`, `aux1`, ...
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AuxlabStatus auxlab_task_weights_new(size_t n_tasks, struct AuxlabTaskWeights **out);

/**
 * `raw_i += lr * alignments[i]` for every task, then renormalizes.
 *
 * # Safety
 * `w` must be a live handle and `alignments` must hold `n` values.
 */
enum AuxlabStatus auxlab_task_weights_update(struct AuxlabTaskWeights *w,
                                             const double *alignments,
                                             size_t n,
                                             double lr);

/**
 * Copies the normalized weights into `out`, which must hold `n` values.
 *
 * # Safety
 * `w` must be a live handle and `out` must have room for `n` values.
 */
enum AuxlabStatus auxlab_task_weights_alpha(const struct AuxlabTaskWeights *w,
                                            double *out,
                                            size_t n);

/**
 * # Safety
 * `w` must come from [`auxlab_task_weights_new`] and not be freed twice.
 */
void auxlab_task_weights_free(struct AuxlabTaskWeights *w);

/**
 * Builds an instance from row-major arrays: `a` holds `n_tasks` matrices of
 * `d × d`, `b` holds `n_tasks` vectors of length `d`, the end task first.
 *
 * # Safety
 * All arrays must have the stated lengths and `out` must be valid.
 */
enum AuxlabStatus auxlab_quadratic_new(size_t d,
                                       size_t n_tasks,
                                       const double *a,
                                       const double *b,
                                       const double *a_val,
                                       const double *b_val,
                                       const double *weights,
                                       struct AuxlabQuadratic **out);

/**
 * Random instance whose total Hessian spectrum spans `[lo, hi]`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AuxlabStatus auxlab_quadratic_random(uint64_t seed,
                                          size_t d,
                                          size_t n_aux,
                                          double lo,
                                          double hi,
                                          struct AuxlabQuadratic **out);

/**
 * Exact hypergradient of the validation loss in task weight `i`, at the
 * instance's weights.
 *
 * # Safety
 * `q` must be a live handle and `out` valid.
 */
enum AuxlabStatus auxlab_quadratic_exact(const struct AuxlabQuadratic *q, size_t i, double *out);

/**
 * Central finite difference of the same quantity with step `h`.
 *
 * # Safety
 * `q` must be a live handle and `out` valid.
 */
enum AuxlabStatus auxlab_quadratic_finite_difference(const struct AuxlabQuadratic *q,
                                                     size_t i,
                                                     double h,
                                                     double *out);

/**
 * Identity-Hessian approximation at the inner optimum, in the same sign
 * convention as the exact value.
 *
 * # Safety
 * `q` must be a live handle and `out` valid.
 */
enum AuxlabStatus auxlab_quadratic_identity(const struct AuxlabQuadratic *q, size_t i, double *out);

/**
 * # Safety
 * `q` must come from this library and not be freed twice.
 */
void auxlab_quadratic_free(struct AuxlabQuadratic *q);

/**
 * Two-sided permutation test on the difference of means. `permutations`
 * of 0 enumerates every relabeling.
 *
 * # Safety
 * `a` and `b` must hold `na` and `nb` values; `p_out` must be valid.
 */
enum AuxlabStatus auxlab_permutation_test(const double *a,
                                          size_t na,
                                          const double *b,
                                          size_t nb,
                                          size_t permutations,
                                          uint64_t seed,
                                          double *p_out);

/**
 * Runs an experiment described by a JSON config. Records go to `out_dir`
 * when it is non-null, else to the config's `output_dir`, else nowhere.
 * On `Ok` or `RunFailed` `*summary_json` receives the summary, to be
 * released with [`auxlab_string_free`].
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out_dir` null or one;
 * `summary_json` a valid pointer.
 */
enum AuxlabStatus auxlab_run_experiment_json(const char *config_json,
                                             const char *out_dir,
                                             char **summary_json);

#endif  /* AUXLAB_H */
