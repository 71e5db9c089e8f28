#ifndef SETPOINT_OCO_H
#define SETPOINT_OCO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpoStatus {
  SPO_STATUS_OK = 0,
  SPO_STATUS_NULL_POINTER = 1,
  SPO_STATUS_INVALID_ARGUMENT = 2,
  SPO_STATUS_DIMENSION_MISMATCH = 3,
  SPO_STATUS_INVALID_CONFIGURATION = 4,
  SPO_STATUS_FEEDBACK_MISMATCH = 5,
  SPO_STATUS_RUNTIME = 6,
  SPO_STATUS_PANIC = 7,
} SpoStatus;

/**
 * Per-round series of an experiment result.
 */
typedef enum SpoSeries {
  SPO_SERIES_SETPOINT = 0,
  SPO_SERIES_ADJUSTMENT = 1,
  SPO_SERIES_LOSS = 2,
  SPO_SERIES_CUMULATIVE_LOSS = 3,
  SPO_SERIES_BASELINE_CUMULATIVE_LOSS = 4,
  SPO_SERIES_REGRET = 5,
  SPO_SERIES_MEAN_NORM = 6,
  SPO_SERIES_L1_NORM = 7,
} SpoSeries;

/**
 * An online algorithm driven one round at a time.
 */
typedef struct SpoAlgorithm SpoAlgorithm;

/**
 * A resolved experiment configuration.
 */
typedef struct SpoConfig SpoConfig;

/**
 * Results of one experiment.
 */
typedef struct SpoResult SpoResult;

/**
 * Trial-averaged headline numbers. Fields that do not apply are NaN.
 */
typedef struct SpoSummary {
  double improvement_pct;
  double unregularized_improvement_pct;
  double mean_improvement_pct;
  double sparsity_improvement_pct;
  /**
   * Fraction in [0, 1] (EV only).
   */
  double simultaneity;
  double regret;
  double regret_bound;
  double bandit_fraction;
} SpoSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string.
 */
const char *spo_version(void);

/**
 * Message of the last failed call on this thread, or null after a
 * successful call. Valid until the next call on this thread.
 */
const char *spo_last_error(void);

/**
 * Number of experiments in a TOML configuration.
 */
enum SpoStatus spo_config_count(const char *toml, size_t *count);

/**
 * Resolves experiment `index` of a TOML configuration.
 */
enum SpoStatus spo_config_parse(const char *toml, size_t index, struct SpoConfig **config);

enum SpoStatus spo_config_set_seed(struct SpoConfig *config, uint64_t seed);

enum SpoStatus spo_config_set_trials(struct SpoConfig *config, size_t trials);

enum SpoStatus spo_config_set_rounds(struct SpoConfig *config, size_t rounds);

/**
 * Sets `ρ` and `λ`.
 */
enum SpoStatus spo_config_set_regularization(struct SpoConfig *config, double rho, double lambda);

void spo_config_free(struct SpoConfig *config);

/**
 * Runs every trial of the experiment.
 */
enum SpoStatus spo_run(const struct SpoConfig *config, struct SpoResult **result);

enum SpoStatus spo_result_summary(const struct SpoResult *result, struct SpoSummary *summary);

/**
 * Number of rounds in each series.
 */
enum SpoStatus spo_result_rounds(const struct SpoResult *result, size_t *rounds);

/**
 * Copies a trial-averaged series into `buffer`, which must hold exactly
 * as many values as there are rounds. Regret is NaN when not computed.
 */
enum SpoStatus spo_result_series(const struct SpoResult *result,
                                 enum SpoSeries series,
                                 double *buffer,
                                 size_t len);

void spo_result_free(struct SpoResult *result);

/**
 * Full-information composite online gradient descent over the box
 * `[lo, hi]` (both null for `[-1, 1]^dim`).
 */
enum SpoStatus spo_algorithm_cogd(size_t dim,
                                  const double *lo,
                                  const double *hi,
                                  double eta,
                                  double rho,
                                  double lambda,
                                  struct SpoAlgorithm **algorithm);

/**
 * Bandit variant seeing only the aggregate adjustment. Perturbation
 * directions are drawn from a generator seeded with `seed`.
 */
enum SpoStatus spo_algorithm_bcogd(size_t dim,
                                   const double *lo,
                                   const double *hi,
                                   double eta,
                                   double delta,
                                   double rho,
                                   double lambda,
                                   uint64_t seed,
                                   struct SpoAlgorithm **algorithm);

enum SpoStatus spo_algorithm_dim(const struct SpoAlgorithm *algorithm, size_t *dim);

/**
 * Writes the signal to broadcast this round into `signal[0..len]`.
 */
enum SpoStatus spo_algorithm_play(struct SpoAlgorithm *algorithm, double *signal, size_t len);

/**
 * Feeds back every load's response. `loss` may be null.
 */
enum SpoStatus spo_algorithm_observe_full(struct SpoAlgorithm *algorithm,
                                          const double *response,
                                          size_t len,
                                          double setpoint,
                                          double *loss);

/**
 * Feeds back only the aggregate adjustment. `loss` may be null.
 */
enum SpoStatus spo_algorithm_observe_aggregate(struct SpoAlgorithm *algorithm,
                                               double total,
                                               double setpoint,
                                               double *loss);

void spo_algorithm_free(struct SpoAlgorithm *algorithm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SETPOINT_OCO_H */
