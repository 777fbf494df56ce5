#ifndef CHAINFLOW_H
#define CHAINFLOW_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>

typedef enum {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_POINTER = 1,
  CF_STATUS_INVALID_UTF8 = 2,
  /*
   The configuration text or an override could not be parsed.
   */
  CF_STATUS_CONFIG = 3,
  /*
   The chain, control or grid is not admissible.
   */
  CF_STATUS_VALIDATION = 4,
  /*
   A solver failed while running.
   */
  CF_STATUS_NUMERICAL = 5,
  CF_STATUS_IO = 6,
  /*
   The buffer passed is shorter than the data; `out_len` holds the need.
   */
  CF_STATUS_BUFFER_TOO_SMALL = 7,
  /*
   A panic was caught at the boundary.
   */
  CF_STATUS_PANIC = 8,
  /*
   An index argument is out of range.
   */
  CF_STATUS_OUT_OF_RANGE = 9,
} CfStatus;

typedef enum {
  CF_STOP_REASON_CONVERGED = 0,
  CF_STOP_REASON_MAX_ITERATIONS = 1,
  CF_STOP_REASON_PINNED = 2,
} CfStopReason;

/*
 Parsed configuration plus the overrides applied so far.
 */
typedef struct CfConfig CfConfig;

/*
 A finished steepest-descent run.
 */
typedef struct CfDescent CfDescent;

/*
 One upwind simulation of a configuration.
 */
typedef struct CfSimulation CfSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *cf_version(void);

/*
 Length in bytes of the last error message on this thread, without the
 terminator; 0 when the last call succeeded.
 */
size_t cf_last_error_length(void);

/*
 Copies the last error message, NUL-terminated, into `buf` of `cap` bytes.

 # Safety
 `buf` must be valid for `cap` bytes.
 */
CfStatus cf_last_error_message(char *buf, size_t cap);

/*
 Parses a TOML run configuration.

 # Safety
 `text` must be a NUL-terminated string and `out` a valid pointer.
 */
CfStatus cf_config_from_str(const char *text, CfConfig **out);

/*
 Applies one `section.key=value` override. On failure the configuration
 is left unchanged.

 # Safety
 `config` must come from [`cf_config_from_str`]; `assignment` must be a
 NUL-terminated string.
 */
CfStatus cf_config_set(CfConfig *config, const char *assignment);

/*
 # Safety
 `config` must come from [`cf_config_from_str`] or be null.
 */
void cf_config_free(CfConfig *config);

/*
 Validates the configuration and runs one upwind simulation.

 # Safety
 `config` must be a live handle and `out` a valid pointer.
 */
CfStatus cf_simulate(const CfConfig *config, CfSimulation **out);

/*
 # Safety
 `sim` must be a live handle; `j1` and `j2` valid pointers.
 */
CfStatus cf_simulation_cost(const CfSimulation *sim, double *j1, double *j2);

/*
 Number of processors in the simulated chain; 0 for a null handle.

 # Safety
 `sim` must be a live handle or null.
 */
size_t cf_simulation_processors(const CfSimulation *sim);

/*
 Queue content in front of `processor` (0-based, at least 1) on its own
 time lattice.

 # Safety
 `sim` must be a live handle; `buf` valid for `cap` values or null;
 `out_len` valid.
 */
CfStatus cf_simulation_queue(const CfSimulation *sim,
                             size_t processor,
                             double *buf,
                             size_t cap,
                             size_t *out_len);

/*
 Sample times matching [`cf_simulation_queue`].

 # Safety
 As for [`cf_simulation_queue`].
 */
CfStatus cf_simulation_queue_times(const CfSimulation *sim,
                                   size_t processor,
                                   double *buf,
                                   size_t cap,
                                   size_t *out_len);

/*
 Outflow of the last processor per step.

 # Safety
 `sim` must be a live handle; `buf` valid for `cap` values or null;
 `out_len` valid.
 */
CfStatus cf_simulation_outflow(const CfSimulation *sim, double *buf, size_t cap, size_t *out_len);

/*
 # Safety
 `sim` must come from [`cf_simulate`] or be null.
 */
void cf_simulation_free(CfSimulation *sim);

/*
 Runs the configured steepest descent.

 # Safety
 `config` must be a live handle and `out` a valid pointer.
 */
CfStatus cf_optimize(const CfConfig *config, CfDescent **out);

/*
 Number of recorded states, the starting point included.

 # Safety
 `d` must be a live handle or null.
 */
size_t cf_descent_len(const CfDescent *d);

/*
 # Safety
 `d` must be a live handle and `out` a valid pointer.
 */
CfStatus cf_descent_stop(const CfDescent *d, CfStopReason *out);

/*
 Switching times of recorded state `iteration`.

 # Safety
 `d` must be a live handle; `buf` valid for `cap` values or null;
 `out_len` valid.
 */
CfStatus cf_descent_taus(const CfDescent *d,
                         size_t iteration,
                         double *buf,
                         size_t cap,
                         size_t *out_len);

/*
 Cost terms of recorded state `iteration`.

 # Safety
 `d` must be a live handle; `j1` and `j2` valid pointers.
 */
CfStatus cf_descent_cost(const CfDescent *d, size_t iteration, double *j1, double *j2);

/*
 # Safety
 `d` must come from [`cf_optimize`] or be null.
 */
void cf_descent_free(CfDescent *d);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHAINFLOW_H */
