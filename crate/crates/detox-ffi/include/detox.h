#ifndef DETOX_H
#define DETOX_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible FFI call.
 */
typedef enum DetoxStatus {
  DETOX_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DETOX_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  DETOX_STATUS_INVALID_UTF8 = 2,
  /**
   * JSON parsing failed or the value violated a structural constraint.
   */
  DETOX_STATUS_INVALID_CONFIG = 3,
  /**
   * The aggregation itself failed (bad dimensions, too few vectors, ...).
   */
  DETOX_STATUS_AGGREGATION_FAILED = 4,
  /**
   * An analysis precondition was violated.
   */
  DETOX_STATUS_ANALYSIS_FAILED = 5,
} DetoxStatus;

/**
 * Opaque aggregator handle.
 */
typedef struct DetoxAggregator DetoxAggregator;

/**
 * Opaque validated run configuration handle.
 */
typedef struct DetoxRunConfig DetoxRunConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread. The pointer stays valid
 * until the next failing call on the same thread; never free it.
 */
const char *detox_last_error_message(void);

/**
 * Build an aggregator from its JSON spec, e.g. `{"kind":"coord_median"}` or
 * `{"kind":"krum","q":2}`. On success writes a handle to `out`.
 *
 * # Safety
 * `json` must point to a nul-terminated string and `out` to writable memory.
 */
enum DetoxStatus detox_aggregator_new(const char *json, struct DetoxAggregator **out);

/**
 * Aggregate `n_vectors` row-major vectors of length `dim` from `data` and
 * write the `dim` result entries to `out`.
 *
 * # Safety
 * `data` must hold `n_vectors * dim` readable doubles, `out` `dim` writable
 * doubles, and `agg` must be a live handle from [`detox_aggregator_new`].
 */
enum DetoxStatus detox_aggregator_apply(const struct DetoxAggregator *agg,
                                        const double *data,
                                        uintptr_t n_vectors,
                                        uintptr_t dim,
                                        double *out);

/**
 * # Safety
 * `agg` must come from [`detox_aggregator_new`] and not be freed twice.
 */
void detox_aggregator_free(struct DetoxAggregator *agg);

/**
 * Parse and validate a full run configuration from JSON.
 *
 * # Safety
 * `json` must point to a nul-terminated string and `out` to writable memory.
 */
enum DetoxStatus detox_config_new(const char *json, struct DetoxRunConfig **out);

/**
 * Number of votes p/r of a validated configuration.
 *
 * # Safety
 * `cfg` must be a live handle and `out` writable.
 */
enum DetoxStatus detox_config_p_hat(const struct DetoxRunConfig *cfg, uintptr_t *out);

/**
 * # Safety
 * `cfg` must come from [`detox_config_new`] and not be freed twice.
 */
void detox_config_free(struct DetoxRunConfig *cfg);

/**
 * Exact expected number of Byzantine votes surviving the filter.
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum DetoxStatus detox_exact_expected_qhat(uintptr_t p, uintptr_t q, uintptr_t r, double *out);

/**
 * Closed-form filtering bound for r > 3, p >= 2r, q/p < 1/40.
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum DetoxStatus detox_qhat_upper_bound(uintptr_t p, uintptr_t q, uintptr_t r, double *out);

/**
 * High-probability surviving-vote threshold 1 + 2 ln(1/delta).
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum DetoxStatus detox_confidence_threshold(double delta, double *out);

/**
 * Tail bound on deviating by a (1 + theta) factor above the expectation.
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum DetoxStatus detox_tail_bound(uintptr_t p, uintptr_t q, uintptr_t r, double theta, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DETOX_H */
