#ifndef KINETIC_MFG_H
#define KINETIC_MFG_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Field selector for [`kmfg_solution_field`].
 */
typedef enum KmfgField {
  /**
   * Density at time nodes `0..=nt`.
   */
  KMFG_FIELD_DENSITY = 0,
  /**
   * Value function at time nodes `0..=nt`.
   */
  KMFG_FIELD_VALUE = 1,
  /**
   * First flux component on intervals `0..nt`.
   */
  KMFG_FIELD_FLUX1 = 2,
  /**
   * Second flux component (d = 2 only).
   */
  KMFG_FIELD_FLUX2 = 3,
  /**
   * Terminal density, a single slice.
   */
  KMFG_FIELD_TERMINAL_DENSITY = 4,
} KmfgField;

/**
 * Result codes. Zero is success.
 */
typedef enum KmfgStatus {
  KMFG_STATUS_OK = 0,
  KMFG_STATUS_NULL_POINTER = 1,
  KMFG_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed configuration text.
   */
  KMFG_STATUS_PARSE = 3,
  /**
   * A configuration value outside its admissible range.
   */
  KMFG_STATUS_RANGE = 4,
  /**
   * Divergence, root-finding or other numerical failure.
   */
  KMFG_STATUS_NUMERICAL = 5,
  KMFG_STATUS_IO = 6,
  /**
   * The solver stopped before meeting its tolerances; the solution is still returned.
   */
  KMFG_STATUS_NOT_CONVERGED = 7,
  /**
   * The output buffer is shorter than the requested field.
   */
  KMFG_STATUS_BUFFER_TOO_SMALL = 8,
  /**
   * Unknown field selector.
   */
  KMFG_STATUS_INVALID_ARGUMENT = 9,
  KMFG_STATUS_PANIC = 10,
} KmfgStatus;

/**
 * Opaque run configuration.
 */
typedef struct KmfgConfig KmfgConfig;

/**
 * Opaque solver output.
 */
typedef struct KmfgSolution KmfgSolution;

/**
 * Grid dimensions of a configuration.
 */
typedef struct KmfgGrid {
  size_t d;
  size_t nx;
  size_t nv;
  size_t nt;
  double horizon;
  double v_max;
} KmfgGrid;

/**
 * Final state of a solve.
 */
typedef struct KmfgSummary {
  size_t iterations;
  bool converged;
  double primal;
  double dual;
  double gap;
  double feasibility;
  double energy_residual;
} KmfgSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread; empty if none. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *kmfg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *kmfg_version(void);

/**
 * Parses `key = value` configuration text into a new handle.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KmfgStatus kmfg_config_parse(const char *text, struct KmfgConfig **out);

/**
 * Releases a configuration. Null is ignored.
 *
 * # Safety
 * `cfg` must come from [`kmfg_config_parse`] and not be used afterwards.
 */
void kmfg_config_free(struct KmfgConfig *cfg);

/**
 * Copies the grid dimensions of `cfg` into `out`.
 *
 * # Safety
 * Both pointers must be valid.
 */
enum KmfgStatus kmfg_config_grid(const struct KmfgConfig *cfg, struct KmfgGrid *out);

/**
 * Runs the primal-dual solver. On `Ok` or `NotConverged`, `*out` holds a
 * new solution handle; otherwise it is null.
 *
 * # Safety
 * `cfg` must be a valid handle and `out` a valid pointer.
 */
enum KmfgStatus kmfg_solve(const struct KmfgConfig *cfg, struct KmfgSolution **out);

/**
 * Releases a solution. Null is ignored.
 *
 * # Safety
 * `sol` must come from [`kmfg_solve`] and not be used afterwards.
 */
void kmfg_solution_free(struct KmfgSolution *sol);

/**
 * Last convergence row of a solution.
 *
 * # Safety
 * Both pointers must be valid.
 */
enum KmfgStatus kmfg_solution_summary(const struct KmfgSolution *sol, struct KmfgSummary *out);

/**
 * Copies a field, slice-major then position then velocity, into `buf`.
 * `*written` receives the field length even when `buf` is too small, so a
 * call with `len = 0` queries the size.
 *
 * # Safety
 * `sol` and `written` must be valid; `buf` must hold `len` doubles or be
 * null with `len = 0`.
 */
enum KmfgStatus kmfg_solution_field(const struct KmfgSolution *sol,
                                    enum KmfgField which,
                                    double *buf,
                                    size_t len,
                                    size_t *written);

/**
 * Optimal primal value from the brute-force oracle (tiny grids only).
 *
 * # Safety
 * Both pointers must be valid.
 */
enum KmfgStatus kmfg_oracle_objective(const struct KmfgConfig *cfg, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KINETIC_MFG_H */
