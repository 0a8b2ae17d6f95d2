#ifndef NODAL_SHEET_H
#define NODAL_SHEET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NsStatus {
  NS_STATUS_OK = 0,
  NS_STATUS_NULL_POINTER = 1,
  /**
   * Invalid configuration or argument.
   */
  NS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Numerical failure.
   */
  NS_STATUS_NUMERICAL = 3,
  /**
   * An experiment ran but failed a statistical check.
   */
  NS_STATUS_ACCEPTANCE_FAILED = 4,
  NS_STATUS_BUFFER_TOO_SMALL = 5,
  NS_STATUS_IO = 6,
  NS_STATUS_PANIC = 7,
} NsStatus;

/**
 * Field sample handle.
 */
typedef struct NsField NsField;

/**
 * Covariance model handle.
 */
typedef struct NsModel NsModel;

/**
 * Brownian sheet sample handle.
 */
typedef struct NsSheet NsSheet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Valid until the next call.
 */
const char *ns_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ns_version(void);

/**
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum NsStatus ns_model_new(const char *name, size_t dim, struct NsModel **out);

/**
 * # Safety
 * `model` must come from [`ns_model_new`] or be null.
 */
void ns_model_free(struct NsModel *model);

/**
 * Covariance `r(lag)` for a lag of length `dim`.
 *
 * # Safety
 * `lag` must point to `dim` readable values; `out` must be writable.
 */
enum NsStatus ns_model_covariance(const struct NsModel *model,
                                  const double *lag,
                                  size_t dim,
                                  double *out);

/**
 * Kac–Rice `gamma2` and `rho1`.
 *
 * # Safety
 * Output pointers must be writable.
 */
enum NsStatus ns_gamma2(const struct NsModel *model, double *gamma2, double *rho1);

/**
 * Samples the field on `[0, side]^d` with spacing `h`.
 *
 * # Safety
 * `out` must be writable.
 */
enum NsStatus ns_field_sample(const struct NsModel *model,
                              double side,
                              double h,
                              uint64_t seed,
                              struct NsField **out);

/**
 * # Safety
 * `field` must come from [`ns_field_sample`] or be null.
 */
void ns_field_free(struct NsField *field);

/**
 * Grid points per axis.
 *
 * # Safety
 * `points` must be writable.
 */
enum NsStatus ns_field_points(const struct NsField *field, size_t *points);

/**
 * Field values, first axis outermost.
 *
 * # Safety
 * `buf` must hold `len` values; `written` may be null.
 */
enum NsStatus ns_field_values(const struct NsField *field,
                              double *buf,
                              size_t len,
                              size_t *written);

/**
 * Total nodal measure of the sample.
 *
 * # Safety
 * `out` must be writable.
 */
enum NsStatus ns_nodal_total(const struct NsField *field, double *out);

/**
 * `xi_R` on the `(m + 1)^d` lattice.
 *
 * # Safety
 * `buf` must hold `len` values; `written` may be null.
 */
enum NsStatus ns_xi_lattice(const struct NsField *field,
                            size_t m,
                            double *buf,
                            size_t len,
                            size_t *written);

/**
 * `H(a, b, lambda)`; pass `INFINITY` for an infinite parameter.
 *
 * # Safety
 * `out` must be writable.
 */
enum NsStatus ns_yeh_h(double a, double b, double lambda, double *out);

/**
 * Brownian sheet on the `(n + 1)^d` lattice.
 *
 * # Safety
 * `out` must be writable.
 */
enum NsStatus ns_sheet_sample(size_t n, size_t dim, uint64_t seed, struct NsSheet **out);

/**
 * # Safety
 * `sheet` must come from [`ns_sheet_sample`] or be null.
 */
void ns_sheet_free(struct NsSheet *sheet);

/**
 * # Safety
 * `buf` must hold `len` values; `written` may be null.
 */
enum NsStatus ns_sheet_values(const struct NsSheet *sheet,
                              double *buf,
                              size_t len,
                              size_t *written);

/**
 * Runs `experiment` (`clt`, `sup`, `moment-scan` or `gamma2`) with a
 * `key=value` configuration and writes its report into `out_dir`.
 * Returns [`NsStatus::AcceptanceFailed`] when any check fails.
 *
 * # Safety
 * String arguments must be NUL-terminated; `config` may be null for defaults.
 */
enum NsStatus ns_run_experiment(const char *experiment, const char *config, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NODAL_SHEET_H */
