#ifndef PSE_H
#define PSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PseStatus {
  PSE_STATUS_OK = 0,
  PSE_STATUS_NULL_POINTER = 1,
  PSE_STATUS_INVALID_ARGUMENT = 2,
  PSE_STATUS_CONFIG = 3,
  PSE_STATUS_SCHEMA = 4,
  PSE_STATUS_IO = 5,
  PSE_STATUS_EMPTY_INPUT = 6,
  PSE_STATUS_DOMAIN = 7,
  PSE_STATUS_TRUNCATION = 8,
  PSE_STATUS_NUMERICAL = 9,
  PSE_STATUS_DIVERGENCE = 10,
  PSE_STATUS_OUT_OF_RANGE = 11,
  PSE_STATUS_PANIC = 12,
} PseStatus;

typedef enum PseSampler {
  /**
   * Use the sampler named in the configuration.
   */
  PSE_SAMPLER_FROM_CONFIG = 0,
  PSE_SAMPLER_MCMC = 1,
  PSE_SAMPLER_SGLD = 2,
} PseSampler;

/**
 * An ingested event log with features.
 */
typedef struct PseDataset PseDataset;

/**
 * A completed posterior fit.
 */
typedef struct PseFit PseFit;

/**
 * Posterior summary for one user.
 */
typedef struct PseUserSummary {
  double pse_mean;
  double pse_lower;
  double pse_upper;
  double mean_iet;
  double mean_focal_iet;
} PseUserSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` and returns the
 * size needed to hold it, or 0 when there is no error. `buf` may be null to
 * query the size.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t pse_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pse_version(void);

/**
 * Long-run share of engagements that land on the focal site.
 *
 * # Safety
 * `out` must be null or a valid pointer.
 */
enum PseStatus pse_share_of_engagement(double phi, double lam, double *out);

/**
 * Mean time between consecutive focal-site engagements.
 *
 * # Safety
 * `out` must be null or a valid pointer.
 */
enum PseStatus pse_mean_focal_iet(uint32_t shape, double rate, double phi, double lam, double *out);

/**
 * Log density of a focal-site inter-engagement time `t`, using the default
 * truncation policy.
 *
 * # Safety
 * `out` must be null or a valid pointer.
 */
enum PseStatus pse_focal_iet_log_density(double t,
                                         uint32_t shape,
                                         double rate,
                                         double phi,
                                         double lam,
                                         double *out);

/**
 * Reads `events` and `features` CSV files. `window` is the observation
 * window in days; 0 selects the default.
 *
 * # Safety
 * Path arguments must be null or NUL-terminated strings; `out` must be null
 * or a valid pointer.
 */
enum PseStatus pse_dataset_load(const char *events,
                                const char *features,
                                uint32_t window,
                                struct PseDataset **out);

/**
 * Number of users in the dataset, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle from [`pse_dataset_load`].
 */
size_t pse_dataset_user_count(const struct PseDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle from [`pse_dataset_load`] not yet freed.
 */
void pse_dataset_free(struct PseDataset *ds);

/**
 * Fits the model to a dataset. `config` is an optional TOML run
 * configuration path (null for defaults). A non-zero `seed` overrides every
 * configured seed.
 *
 * # Safety
 * `ds` must be a live dataset handle, `config` null or a NUL-terminated
 * string, and `out` a valid pointer.
 */
enum PseStatus pse_fit(const struct PseDataset *ds,
                       const char *config,
                       enum PseSampler sampler,
                       uint64_t seed,
                       struct PseFit **out);

/**
 * Number of users that entered estimation, or 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle from [`pse_fit`].
 */
size_t pse_fit_user_count(const struct PseFit *fit);

/**
 * Number of dataset users left out of estimation, or 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle from [`pse_fit`].
 */
size_t pse_fit_excluded_count(const struct PseFit *fit);

/**
 * Posterior summary of user `index` in estimation order.
 *
 * # Safety
 * `fit` must be a live handle and `out` a valid pointer.
 */
enum PseStatus pse_fit_user(const struct PseFit *fit, size_t index, struct PseUserSummary *out);

/**
 * Copies the id of user `index` into `buf`. `needed`, if non-null, receives
 * the buffer size required including the terminating NUL.
 *
 * # Safety
 * `fit` must be a live handle, `buf` null or `len` writable bytes, and
 * `needed` null or a valid pointer.
 */
enum PseStatus pse_fit_user_id(const struct PseFit *fit,
                               size_t index,
                               char *buf,
                               size_t len,
                               size_t *needed);

/**
 * Mean negative log-likelihood over post-burn-in iterations.
 *
 * # Safety
 * `fit` must be a live handle and `out` a valid pointer.
 */
enum PseStatus pse_fit_neg_log_lik(const struct PseFit *fit, double *out);

/**
 * Writes the fit files into directory `dir`, creating it if needed.
 *
 * # Safety
 * `fit` must be a live handle and `dir` a NUL-terminated string.
 */
enum PseStatus pse_fit_write(const struct PseFit *fit, const char *dir, bool theta_trace);

/**
 * # Safety
 * `fit` must be null or a handle from [`pse_fit`] not yet freed.
 */
void pse_fit_free(struct PseFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSE_H */
