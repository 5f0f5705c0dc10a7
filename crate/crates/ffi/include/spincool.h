#ifndef SPINCOOL_H
#define SPINCOOL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every call.
 */
typedef enum SpincoolStatus {
  SPINCOOL_STATUS_OK = 0,
  SPINCOOL_STATUS_NULL_POINTER = 1,
  SPINCOOL_STATUS_INVALID_CONFIG = 2,
  SPINCOOL_STATUS_NUMERIC_FAILURE = 3,
  SPINCOOL_STATUS_OUT_OF_RANGE = 4,
  SPINCOOL_STATUS_PANIC = 5,
} SpincoolStatus;

/**
 * Postselection strategies selectable over the ABI.
 */
typedef enum SpincoolStrategy {
  SPINCOOL_STRATEGY_INDEPENDENT = 0,
  SPINCOOL_STRATEGY_CORR2 = 1,
  SPINCOOL_STRATEGY_CORR3 = 2,
  SPINCOOL_STRATEGY_COLLECTIVE = 3,
} SpincoolStrategy;

/**
 * Opaque handle to a finished protocol run.
 */
typedef struct SpincoolRun SpincoolRun;

/**
 * Model parameters; times and rates are in units of the mechanical
 * frequency.
 */
typedef struct SpincoolParams {
  double lambda;
  double t;
  double nbar;
  uintptr_t n_spins;
  uintptr_t dim;
  /**
   * 0 = product basis, 1 = collective (Dicke) basis.
   */
  int32_t basis;
} SpincoolParams;

/**
 * Decay rates for the open-system run.
 */
typedef struct SpincoolRates {
  double gamma;
  double spin_relaxation;
  double dephasing;
  double nbar_bath;
} SpincoolRates;

/**
 * One iteration of the cooling protocol.
 */
typedef struct SpincoolRecord {
  uintptr_t index;
  double mean_phonon;
  double ratio;
  double dx;
  double dy;
  double step_probability;
  double cumulative_probability;
} SpincoolRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Run the closed-system cooling protocol.
 *
 * On success `*out_run` owns the records; free it with
 * `spincool_run_free`.
 *
 * # Safety
 * `params` and `out_run` must be valid, properly aligned pointers.
 */
enum SpincoolStatus spincool_run_protocol(const struct SpincoolParams *params,
                                          enum SpincoolStrategy strategy,
                                          uintptr_t iterations,
                                          struct SpincoolRun **out_run);

/**
 * Run the open-system protocol (independent strategy, product basis).
 *
 * # Safety
 * `params`, `rates` and `out_run` must be valid, properly aligned
 * pointers.
 */
enum SpincoolStatus spincool_run_protocol_open(const struct SpincoolParams *params,
                                               const struct SpincoolRates *rates,
                                               uintptr_t iterations,
                                               double dt,
                                               struct SpincoolRun **out_run);

/**
 * Number of records held by a run handle; 0 for null.
 *
 * # Safety
 * `run` must be null or a pointer from a `spincool_run_*` call.
 */
uintptr_t spincool_run_len(const struct SpincoolRun *run);

/**
 * Copy record `index` (0-based) into `*out_record`.
 *
 * # Safety
 * `run` must come from a `spincool_run_*` call and `out_record` must be
 * a valid pointer.
 */
enum SpincoolStatus spincool_run_record(const struct SpincoolRun *run,
                                        uintptr_t index,
                                        struct SpincoolRecord *out_record);

/**
 * Release a run handle. Null is a no-op.
 *
 * # Safety
 * `run` must be null or an owned pointer from a `spincool_run_*` call,
 * released at most once.
 */
void spincool_run_free(struct SpincoolRun *run);

/**
 * Dimensionless coupling from gradient (T/m), mass (kg) and angular
 * frequency (rad/s).
 *
 * # Safety
 * `out_lambda` must be a valid pointer.
 */
enum SpincoolStatus spincool_estimate_coupling(double gradient,
                                               double mass,
                                               double omega,
                                               double *out_lambda);

/**
 * Copy the calling thread's last error message (NUL-terminated,
 * truncated to `len`) into `buf`; returns the untruncated length.
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes, or be null.
 */
uintptr_t spincool_last_error(char *buf, uintptr_t len);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SPINCOOL_H */
