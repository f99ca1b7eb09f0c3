#ifndef PERISCAT_H
#define PERISCAT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_UTF8 = 2,
  PS_STATUS_CONFIG = 3,
  PS_STATUS_GEOMETRY = 4,
  PS_STATUS_DOMAIN = 5,
  PS_STATUS_SOLVER = 6,
  PS_STATUS_SHAPE = 7,
  PS_STATUS_IO = 8,
  PS_STATUS_PANIC = 99,
} PsStatus;

/**
 * Parsed experiment configuration.
 */
typedef struct PsConfig PsConfig;

/**
 * Solved Bloch system for one configuration.
 */
typedef struct PsSolution PsSolution;

typedef struct PsComplex {
  double re;
  double im;
} PsComplex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *ps_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library on the same thread.
 */
const char *ps_last_error_message(void);

/**
 * Parses and validates a JSON configuration.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` a writable pointer.
 */
enum PsStatus ps_config_from_json(const char *json, struct PsConfig **out);

/**
 * # Safety
 * `cfg` must come from [`ps_config_from_json`] or be null.
 */
void ps_config_free(struct PsConfig *cfg);

/**
 * Assembles and solves the configuration at its own N.
 *
 * # Safety
 * `cfg` must be a live configuration handle and `out` a writable pointer.
 */
enum PsStatus ps_solve(const struct PsConfig *cfg, struct PsSolution **out);

/**
 * # Safety
 * `sol` must come from [`ps_solve`] or be null.
 */
void ps_solution_free(struct PsSolution *sol);

/**
 * Number of roof nodes.
 *
 * # Safety
 * `sol` must be a live solution handle and `len` writable.
 */
enum PsStatus ps_solution_roof_len(const struct PsSolution *sol, size_t *len);

/**
 * Scattered field at the roof nodes. `x1` may be null; otherwise it
 * receives the node abscissae. Both buffers hold `len` entries, which must
 * equal [`ps_solution_roof_len`].
 *
 * # Safety
 * Buffers must be valid for `len` writes.
 */
enum PsStatus ps_solution_roof(const struct PsSolution *sol,
                               double *x1,
                               struct PsComplex *values,
                               size_t len);

/**
 * Scattered field at `n` points `(points[2i], points[2i+1])` of the
 * reference cell shifted by `shift` periods.
 *
 * # Safety
 * `points` must hold `2n` values and `values` room for `n`.
 */
enum PsStatus ps_scattered_field(const struct PsSolution *sol,
                                 const double *points,
                                 size_t n,
                                 int64_t shift,
                                 struct PsComplex *values);

/**
 * `H₀⁽¹⁾(x)` for `x > 0`.
 *
 * # Safety
 * `out` must be writable.
 */
enum PsStatus ps_hankel0(double x, struct PsComplex *out);

/**
 * Wood-anomaly breakpoints of the shifted dual cell. Writes up to `cap`
 * points and the full count to `len`; `kappa` may be null.
 *
 * # Safety
 * `points` must have room for `cap` values; `len` must be writable.
 */
enum PsStatus ps_wood_breakpoints(double k,
                                  double period,
                                  double *points,
                                  size_t cap,
                                  size_t *len,
                                  double *kappa);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERISCAT_H */
