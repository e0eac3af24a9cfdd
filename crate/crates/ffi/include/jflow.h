#ifndef JFLOW_H
#define JFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  JFLOW_STATUS_OK = 0,
  JFLOW_STATUS_NULL_POINTER = 1,
  JFLOW_STATUS_INVALID_ARGUMENT = 2,
  JFLOW_STATUS_CONFIG = 3,
  JFLOW_STATUS_SHAPE_MISMATCH = 4,
  JFLOW_STATUS_NOT_KAHLER = 5,
  JFLOW_STATUS_STEP_STALLED = 6,
  JFLOW_STATUS_CONVEXITY_LOST = 7,
  JFLOW_STATUS_UNSUPPORTED_BACKEND = 8,
  JFLOW_STATUS_IO = 9,
  JFLOW_STATUS_SERIALIZATION = 10,
  JFLOW_STATUS_PANIC = 11,
} JflowStatus;

typedef enum {
  JFLOW_FLOW_STATUS_CONVERGED = 0,
  JFLOW_FLOW_STATUS_NON_CONVERGENCE = 1,
  JFLOW_FLOW_STATUS_STEP_STALLED = 2,
} JflowFlowStatus;

typedef enum {
  JFLOW_COMMAND_SIMULATE = 0,
  JFLOW_COMMAND_FUNCTIONALS = 1,
  JFLOW_COMMAND_CHECK_CONE = 2,
  JFLOW_COMMAND_GEODESIC_PROBE = 3,
  JFLOW_COMMAND_REPORT = 4,
} JflowCommand;

// A discretised torus or sphere.
typedef struct JflowBackend JflowBackend;

// The outcome of one flow run.
typedef struct JflowFlowResult JflowFlowResult;

// Potential values on the grid of one backend.
typedef struct JflowPotential JflowPotential;

// A parsed scenario file.
typedef struct JflowScenario JflowScenario;

typedef struct {
  double c;
  double i;
  double j;
  double j_hat;
  double j_tilde;
  double entropy;
  double k_energy;
  double k_energy_modified;
  double energy;
} JflowFunctionals;

// Non-positive `dt_max` and zero `max_steps` keep the library defaults.
typedef struct {
  double t_max;
  double residual_target;
  double dt_max;
  size_t max_steps;
} JflowFlowOptions;

typedef struct {
  JflowFlowStatus status;
  double c;
  double t;
  double energy;
  double residual;
  size_t steps;
  size_t rejected_steps;
} JflowFlowSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. Valid until
// the next call into the library from the same thread.
const char *jflow_last_error_message(void);

// Static, nul-terminated version string.
const char *jflow_version(void);

// Releases a string returned by the library.
//
// # Safety
// `s` must be null or a string returned by this library and not yet freed.
void jflow_string_free(char *s);

// # Safety
// `out` must be null or valid for writes.
JflowStatus jflow_backend_torus(size_t n, size_t points, JflowBackend **out);

// # Safety
// `out` must be null or valid for writes.
JflowStatus jflow_backend_sphere(size_t points, double truncation, JflowBackend **out);

// Number of grid points, or 0 for a null handle.
//
// # Safety
// `b` must be null or a live backend handle.
size_t jflow_backend_len(const JflowBackend *b);

// Complex dimension, or 0 for a null handle.
//
// # Safety
// `b` must be null or a live backend handle.
size_t jflow_backend_dim(const JflowBackend *b);

// Points along `axis`, or 0 for a null handle or an axis out of range.
//
// # Safety
// `b` must be null or a live backend handle.
size_t jflow_backend_axis_len(const JflowBackend *b, size_t axis);

// Copies the grid coordinates along `axis` into `buf`, which must hold
// [`jflow_backend_axis_len`] values.
//
// # Safety
// `b` must be a live backend handle and `buf` valid for `len` writes.
JflowStatus jflow_backend_coordinates(const JflowBackend *b, size_t axis, double *buf, size_t len);

// # Safety
// `b` must be null or a live backend handle not used afterwards.
void jflow_backend_free(JflowBackend *b);

// Samples an expression such as `"cosine(0.01, 2) + sine(0.02, 1, 1)"`.
//
// # Safety
// `b` must be a live backend handle, `expr` a nul-terminated string and
// `out` valid for writes.
JflowStatus jflow_potential_from_expr(const JflowBackend *b,
                                      const char *expr,
                                      JflowPotential **out);

// # Safety
// `b` must be a live backend handle, `values` valid for `len` reads and
// `out` valid for writes.
JflowStatus jflow_potential_from_values(const JflowBackend *b,
                                        const double *values,
                                        size_t len,
                                        JflowPotential **out);

// Number of values, or 0 for a null handle.
//
// # Safety
// `p` must be null or a live potential handle.
size_t jflow_potential_len(const JflowPotential *p);

// # Safety
// `p` must be a live potential handle and `buf` valid for `len` writes.
JflowStatus jflow_potential_copy_values(const JflowPotential *p, double *buf, size_t len);

// # Safety
// `p` must be null or a live potential handle not used afterwards.
void jflow_potential_free(JflowPotential *p);

// Evaluates the energy functionals of `phi` with `ω = omega_multiple·χ0`.
// `path_steps = 0` selects the default quadrature.
//
// # Safety
// Handles must be live and `out` valid for writes.
JflowStatus jflow_functionals(const JflowBackend *b,
                              const JflowPotential *phi,
                              double omega_multiple,
                              size_t path_steps,
                              JflowFunctionals *out);

JflowFlowOptions jflow_flow_options_default(void);

// Runs the flow from `phi0` with `ω = omega_multiple·χ0`. A null `options`
// uses [`jflow_flow_options_default`]. Non-convergence and stalled steps are
// reported through the summary, not the status.
//
// # Safety
// Handles must be live, `options` null or readable, `out` valid for writes.
JflowStatus jflow_flow_run(const JflowBackend *b,
                           const JflowPotential *phi0,
                           double omega_multiple,
                           const JflowFlowOptions *options,
                           JflowFlowResult **out);

// # Safety
// `r` must be a live result handle and `out` valid for writes.
JflowStatus jflow_flow_result_summary(const JflowFlowResult *r, JflowFlowSummary *out);

// New handle holding the final potential, normalized to mean zero
// against the reference measure when `normalized` is non-zero.
//
// # Safety
// `r` must be a live result handle and `out` valid for writes.
JflowStatus jflow_flow_result_potential(const JflowFlowResult *r,
                                        int normalized,
                                        JflowPotential **out);

// Trajectory as CSV text; release with [`jflow_string_free`].
//
// # Safety
// `r` must be a live result handle and `out` valid for writes.
JflowStatus jflow_flow_result_trajectory_csv(const JflowFlowResult *r, char **out);

// # Safety
// `r` must be null or a live result handle not used afterwards.
void jflow_flow_result_free(JflowFlowResult *r);

// Parses scenario TOML text.
//
// # Safety
// `toml` must be a nul-terminated string and `out` valid for writes.
JflowStatus jflow_scenario_from_toml(const char *toml, JflowScenario **out);

// Reads a scenario file.
//
// # Safety
// `path` must be a nul-terminated string and `out` valid for writes.
JflowStatus jflow_scenario_load(const char *path, JflowScenario **out);

// # Safety
// `s` must be a live scenario handle and `dir` a nul-terminated string.
JflowStatus jflow_scenario_set_output_directory(JflowScenario *s, const char *dir);

// # Safety
// `s` must be a live scenario handle.
JflowStatus jflow_scenario_set_seed(JflowScenario *s, uint64_t seed);

// Effective configuration as TOML; release with [`jflow_string_free`].
//
// # Safety
// `s` must be a live scenario handle and `out` valid for writes.
JflowStatus jflow_scenario_to_toml(const JflowScenario *s, char **out);

// Runs a pipeline and writes its files. `exit_code` (optional) receives the
// command-line exit code: 0 success, 1 failure, 2 configuration error,
// 3 stalled step, 4 required convergence not reached.
//
// # Safety
// `s` must be a live scenario handle; `exit_code` null or valid for writes.
JflowStatus jflow_scenario_run(const JflowScenario *s, JflowCommand command, int *exit_code);

// # Safety
// `s` must be null or a live scenario handle not used afterwards.
void jflow_scenario_free(JflowScenario *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JFLOW_H */
