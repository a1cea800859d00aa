#ifndef ODCAL_H
#define ODCAL_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum OdcalStatus {
  ODCAL_STATUS_OK = 0,
  ODCAL_STATUS_NULL_POINTER = 1,
  ODCAL_STATUS_INVALID_UTF8 = 2,
  ODCAL_STATUS_SCHEMA = 3,
  ODCAL_STATUS_INVARIANT = 4,
  ODCAL_STATUS_DIMENSION = 5,
  ODCAL_STATUS_BOUNDS = 6,
  ODCAL_STATUS_EMPTY_SEGMENT_SET = 7,
  ODCAL_STATUS_BUDGET = 8,
  ODCAL_STATUS_INVALID_ARGUMENT = 9,
  ODCAL_STATUS_IO = 10,
  ODCAL_STATUS_OTHER = 11,
  ODCAL_STATUS_PANIC = 12,
} OdcalStatus;

typedef enum OdcalAlgorithm {
  ODCAL_ALGORITHM_METAMODEL = 0,
  ODCAL_ALGORITHM_SPSA = 1,
} OdcalAlgorithm;

/**
 * Opaque ground-truth handle.
 */
typedef struct OdcalGroundTruth OdcalGroundTruth;

/**
 * Opaque network handle.
 */
typedef struct OdcalNetwork OdcalNetwork;

/**
 * Simulator settings. `demand_noise`: 0 = Poisson, 1 = none.
 */
typedef struct OdcalSimConfig {
  uint32_t demand_noise;
  double speed_noise_sigma;
  double param_bias_scale;
  double spillback_coupling;
  uint64_t bias_seed;
} OdcalSimConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *odcal_last_error_message(void);

/**
 * Default simulator settings.
 */
struct OdcalSimConfig odcal_sim_config_default(void);

/**
 * Settings under which the simulator equals the analytical model.
 */
struct OdcalSimConfig odcal_sim_config_noise_free(void);

/**
 * Fundamental-diagram speed. Returns NaN for invalid parameters.
 */
double odcal_fd_speed(double v_min,
                      double v_max,
                      double q_max,
                      double alpha1,
                      double alpha2,
                      double q);

/**
 * nRMSE of `sim` against `gt`, both of length `len`.
 *
 * # Safety
 * `sim` and `gt` must point to `len` readable doubles; `out` must be writable.
 */
enum OdcalStatus odcal_nrmse(const double *sim, const double *gt, size_t len, double *out);

/**
 * Parses and validates a network document given as JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable. The
 * handle written to `out` must be released with [`odcal_network_free`].
 */
enum OdcalStatus odcal_network_from_json(const char *json, struct OdcalNetwork **out);

/**
 * Loads a network file.
 *
 * # Safety
 * As [`odcal_network_from_json`], with `path` a NUL-terminated path.
 */
enum OdcalStatus odcal_network_load(const char *path, struct OdcalNetwork **out);

/**
 * Releases a network. Null is ignored.
 *
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void odcal_network_free(struct OdcalNetwork *net);

/**
 * Number of segments, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t odcal_network_n_segments(const struct OdcalNetwork *net);

/**
 * Number of OD pairs, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t odcal_network_n_od(const struct OdcalNetwork *net);

/**
 * Writes the demand upper bounds into `out` (length = number of OD pairs).
 *
 * # Safety
 * `net` must be a live handle; `out` must point to `len` writable doubles.
 */
enum OdcalStatus odcal_network_upper_bounds(const struct OdcalNetwork *net,
                                            double *out,
                                            size_t len);

/**
 * One simulator run at demand `x`. `cfg` may be null for the defaults.
 * Speeds and counts are written in network segment order.
 *
 * # Safety
 * `net` must be a live handle; `x` must hold `n_od` doubles; `speeds` and
 * `counts` must each hold `n_seg` writable doubles.
 */
enum OdcalStatus odcal_simulate(const struct OdcalNetwork *net,
                                const double *x,
                                size_t n_od,
                                uint64_t seed,
                                const struct OdcalSimConfig *cfg,
                                double *speeds,
                                double *counts,
                                size_t n_seg);

/**
 * Simulates `n_reps` replications at `x` and keeps the replication means
 * as ground truth. `cfg` may be null for the defaults.
 *
 * # Safety
 * `net` must be a live handle; `x` must hold `n_od` doubles; `out` must be
 * writable. Release the result with [`odcal_gt_free`].
 */
enum OdcalStatus odcal_gt_generate(const struct OdcalNetwork *net,
                                   const double *x,
                                   size_t n_od,
                                   size_t n_reps,
                                   uint64_t seed,
                                   const struct OdcalSimConfig *cfg,
                                   struct OdcalGroundTruth **out);

/**
 * Releases a ground-truth handle. Null is ignored.
 *
 * # Safety
 * `gt` must come from this library and not be used afterwards.
 */
void odcal_gt_free(struct OdcalGroundTruth *gt);

/**
 * Writes the ground-truth speeds (network segment order).
 *
 * # Safety
 * `gt` must be a live handle; `out` must hold `len` writable doubles.
 */
enum OdcalStatus odcal_gt_speeds(const struct OdcalGroundTruth *gt, double *out, size_t len);

/**
 * Analytical loss and its gradient at `x` over the segments whose GT speed
 * ratio is at most `threshold`. `grad` may be null.
 *
 * # Safety
 * `net`, `gt` must be live handles; `x` and (if non-null) `grad` must hold
 * `n_od` doubles; `loss` must be writable.
 */
enum OdcalStatus odcal_analytical_loss(const struct OdcalNetwork *net,
                                       const struct OdcalGroundTruth *gt,
                                       double threshold,
                                       const double *x,
                                       size_t n_od,
                                       double *loss,
                                       double *grad);

/**
 * Calibrates from `x0` with default algorithm settings, simulator `cfg`
 * (null for defaults) and the given budget and seed. Writes the best demand
 * found to `best_x` and its simulated loss to `best_loss`.
 *
 * # Safety
 * `net`, `gt` must be live handles; `x0` and `best_x` must hold `n_od`
 * doubles; `best_loss` must be writable.
 */
enum OdcalStatus odcal_calibrate(const struct OdcalNetwork *net,
                                 const struct OdcalGroundTruth *gt,
                                 const struct OdcalSimConfig *cfg,
                                 enum OdcalAlgorithm algorithm,
                                 double threshold,
                                 size_t budget,
                                 uint64_t seed,
                                 const double *x0,
                                 size_t n_od,
                                 double *best_x,
                                 double *best_loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ODCAL_H */
