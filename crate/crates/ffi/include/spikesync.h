#ifndef SPIKESYNC_H
#define SPIKESYNC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  SS_STATUS_IO = 3,
  SS_STATUS_PARSE = 4,
  SS_STATUS_CONVERGENCE = 5,
  /**
   * The data cannot support the requested estimate or test.
   */
  SS_STATUS_DEGENERATE = 6,
  SS_STATUS_INFEASIBLE = 7,
  SS_STATUS_SIMULATION = 8,
  SS_STATUS_PANIC = 9,
} SsStatus;

/**
 * Hypothesis tested by [`ss_test`].
 */
typedef enum SsHypothesis {
  SS_HYPOTHESIS_PAIR_MARGINAL = 0,
  SS_HYPOTHESIS_PAIR_CONDITIONAL = 1,
  /**
   * Uses `lag_bins`.
   */
  SS_HYPOTHESIS_PAIR_LAGGED = 2,
  SS_HYPOTHESIS_TRIPLE = 3,
} SsHypothesis;

/**
 * Binary spike tensor.
 */
typedef struct SsBinned SsBinned;

/**
 * Spike times for every trial and neuron.
 */
typedef struct SsExperiment SsExperiment;

/**
 * Fitted intensity for one neuron.
 */
typedef struct SsFit SsFit;

/**
 * Outcome of [`ss_test`].
 */
typedef struct SsTestSummary {
  size_t n_joint;
  double expected_joint;
  double xi_hat;
  /**
   * NaN when `xi_hat` is 0.
   */
  double log_xi;
  double se;
  double z;
  double p_normal;
  double p_empirical;
  bool one_sided;
  size_t undefined_replicates;
  bool reject;
} SsTestSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *ss_last_error(void);

void ss_clear_error(void);

/**
 * Library version, static storage.
 */
const char *ss_version(void);

/**
 * Loads an event file plus its `.meta.json` sidecar.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SsStatus ss_experiment_load(const char *path, struct SsExperiment **out);

/**
 * Builds an experiment from `n` spikes given as parallel arrays of 0-based
 * trial and neuron indices and times in seconds, in any order.
 *
 * # Safety
 * Each array must hold `n` readable elements; `out` must be writable.
 */
enum SsStatus ss_experiment_new(double duration,
                                size_t neurons,
                                size_t trials,
                                const uint32_t *trial,
                                const uint32_t *neuron,
                                const double *time,
                                size_t n,
                                struct SsExperiment **out);

/**
 * # Safety
 * `exp` must come from this library and not be used afterwards. NULL is ignored.
 */
void ss_experiment_free(struct SsExperiment *exp);

/**
 * Total number of spikes; 0 for NULL.
 *
 * # Safety
 * `exp` must be NULL or a live handle.
 */
size_t ss_experiment_spike_count(const struct SsExperiment *exp);

/**
 * Bins every train at width `delta` seconds.
 *
 * # Safety
 * `exp` must be a live handle; `out` must be writable.
 */
enum SsStatus ss_bin(const struct SsExperiment *exp, double delta, struct SsBinned **out);

/**
 * # Safety
 * `binned` must come from this library and not be used afterwards. NULL is ignored.
 */
void ss_binned_free(struct SsBinned *binned);

/**
 * Writes trials, neurons and bins; any of the outputs may be NULL.
 *
 * # Safety
 * `binned` must be a live handle; non-NULL outputs must be writable.
 */
enum SsStatus ss_binned_shape(const struct SsBinned *binned,
                              size_t *trials,
                              size_t *neurons,
                              size_t *bins);

/**
 * Fits the intensity of 0-based `neuron` with a cubic spline in time.
 * Positive `own_window` and `population_window` (seconds) add history terms;
 * pass 0 for both to fit time only. `exclude` lists 0-based neurons left out
 * of the population count.
 *
 * # Safety
 * `binned` must be a live handle; `exclude` must hold `n_exclude` elements;
 * `out` must be writable.
 */
enum SsStatus ss_fit(const struct SsBinned *binned,
                     size_t neuron,
                     double knot_spacing,
                     double own_window,
                     double population_window,
                     const size_t *exclude,
                     size_t n_exclude,
                     double ridge,
                     struct SsFit **out);

/**
 * # Safety
 * `fit` must come from this library and not be used afterwards. NULL is ignored.
 */
void ss_fit_free(struct SsFit *fit);

/**
 * Intensity in events per second at time `t`. Fits with history terms
 * need `own` and `population` spike counts over their windows; they are
 * ignored otherwise.
 *
 * # Safety
 * `fit` must be a live handle; `out` must be writable.
 */
enum SsStatus ss_fit_eval(const struct SsFit *fit,
                          double t,
                          double own,
                          double population,
                          double *out);

/**
 * The fit as JSON; release with [`ss_string_free`].
 *
 * # Safety
 * `fit` must be a live handle; `out` must be writable.
 */
enum SsStatus ss_fit_to_json(const struct SsFit *fit, char **out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void ss_string_free(char *s);

/**
 * Bootstrap test of excess synchrony among the neurons of `fits` (two, or
 * three for a triple), using `replicates` parametric replicates.
 *
 * # Safety
 * `binned` must be a live handle; `fits` must hold `n_fits` live handles;
 * `out` must be writable.
 */
enum SsStatus ss_test(const struct SsBinned *binned,
                      const struct SsFit *const *fits,
                      size_t n_fits,
                      enum SsHypothesis hypothesis,
                      size_t lag_bins,
                      size_t replicates,
                      double alpha,
                      uint64_t seed,
                      struct SsTestSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPIKESYNC_H */
