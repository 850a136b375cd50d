#ifndef CELLFIT_H
#define CELLFIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Trace column selector for [`cf_trace_column`].
typedef enum CfColumn {
  // Seconds.
  CF_COLUMN_TIME = 0,
  // Volts.
  CF_COLUMN_VOLTAGE = 1,
  // Amperes, positive on discharge.
  CF_COLUMN_CURRENT = 2,
  // Ampere-hours discharged.
  CF_COLUMN_CAPACITY = 3,
} CfColumn;

typedef enum CfStatus {
  CF_STATUS_OK = 0,
  // A required pointer argument was null.
  CF_STATUS_ERR_NULL = 1,
  // A string argument was not valid UTF-8.
  CF_STATUS_ERR_UTF8 = 2,
  CF_STATUS_ERR_PARSE = 3,
  // A value or parameter set violates its constraints.
  CF_STATUS_ERR_VALIDATION = 4,
  CF_STATUS_ERR_SIMULATION = 5,
  CF_STATUS_ERR_IO = 6,
  // Unknown parameter name.
  CF_STATUS_ERR_NOT_FOUND = 7,
  // Internal error; the library state is unchanged.
  CF_STATUS_ERR_PANIC = 8,
} CfStatus;

typedef struct CfParams CfParams;

typedef struct CfProtocol CfProtocol;

typedef struct CfTrace CfTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *cf_last_error_message(void);

// # Safety
// `s` must come from this library, or be null.
void cf_string_free(char *s);

// The bundled parameter set.
struct CfParams *cf_params_default(void);

// # Safety
// `json` must be a nul-terminated string; `out` a writable pointer.
enum CfStatus cf_params_from_json(const char *json, struct CfParams **out);

// # Safety
// `path` must be a nul-terminated string; `out` a writable pointer.
enum CfStatus cf_params_load(const char *path, struct CfParams **out);

// # Safety
// `params` must be live; `name` nul-terminated; `out` writable.
enum CfStatus cf_params_get(const struct CfParams *params, const char *name, double *out);

// Sets a value and checks the whole set; on failure nothing changes.
//
// # Safety
// `params` must be live; `name` nul-terminated.
enum CfStatus cf_params_set(struct CfParams *params, const char *name, double value);

// # Safety
// `params` must be live; `out` writable.
enum CfStatus cf_params_to_json(const struct CfParams *params, char **out);

// # Safety
// `params` must come from this library, or be null.
void cf_params_free(struct CfParams *params);

// Capacity [Ah] the electrodes can hold over their usable stoichiometry.
//
// # Safety
// `params` must be live; `out` writable.
enum CfStatus cf_theoretical_capacity(const struct CfParams *params, double *out);

// CC-CV charge, rest and CC discharge at `c_rate`, between the cell's
// voltage limits.
//
// # Safety
// `params` must be live; `out` writable.
enum CfStatus cf_protocol_cccv(const struct CfParams *params,
                               double c_rate,
                               struct CfProtocol **out);

// # Safety
// `json` nul-terminated; `out` writable.
enum CfStatus cf_protocol_from_json(const char *json, struct CfProtocol **out);

// # Safety
// `protocol` must come from this library, or be null.
void cf_protocol_free(struct CfProtocol *protocol);

// Runs `protocol` from the parameter set's initial state. A run that stops
// early still yields a trace; check [`cf_trace_event`].
//
// # Safety
// `params` and `protocol` must be live; `out` writable.
enum CfStatus cf_simulate(const struct CfParams *params,
                          const struct CfProtocol *protocol,
                          struct CfTrace **out);

// Number of samples; 0 for a null trace.
//
// # Safety
// `trace` must be live or null.
size_t cf_trace_len(const struct CfTrace *trace);

// Why the run ended, e.g. `completed` or `voltage_cutoff`.
//
// # Safety
// `trace` must be live; `out` writable.
enum CfStatus cf_trace_event(const struct CfTrace *trace, char **out);

// Borrows one column. `*data` stays valid while the trace is alive.
//
// # Safety
// `trace` must be live; `data` and `len` writable.
enum CfStatus cf_trace_column(const struct CfTrace *trace,
                              enum CfColumn column,
                              const double **data,
                              size_t *len);

// # Safety
// `trace` must be live; `path` nul-terminated.
enum CfStatus cf_trace_write_csv(const struct CfTrace *trace, const char *path);

// Reads a trace written by [`cf_trace_write_csv`] or the command line.
//
// # Safety
// `path` nul-terminated; `out` writable.
enum CfStatus cf_trace_load_csv(const char *path, struct CfTrace **out);

// # Safety
// `trace` must come from this library, or be null.
void cf_trace_free(struct CfTrace *trace);

// Scores `sim` against `target` under the default loss and returns the
// feedback package as JSON.
//
// # Safety
// All handles live; `out` writable.
enum CfStatus cf_feedback_json(const struct CfTrace *sim,
                               const struct CfTrace *target,
                               const struct CfProtocol *protocol,
                               char **out);

// Mean absolute percentage error of `sim` against `obs`, in percent.
// Samples near zero are masked; if every sample is masked the result is
// NaN.
//
// # Safety
// `sim` and `obs` must hold `n` values; `out` writable.
enum CfStatus cf_mape(const double *sim, const double *obs, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CELLFIT_H */
