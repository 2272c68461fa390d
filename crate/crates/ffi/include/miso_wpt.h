#ifndef MISO_WPT_H
#define MISO_WPT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MwStatus {
  MW_STATUS_OK = 0,
  MW_STATUS_NULL_POINTER = 1,
  MW_STATUS_INVALID_ARGUMENT = 2,
  // The matrix is asymmetric, not passive, or otherwise unusable.
  MW_STATUS_INVALID_SYSTEM = 3,
  // The power constraints admit no operating point.
  MW_STATUS_INFEASIBLE = 4,
  MW_STATUS_SOLVER_FAILURE = 5,
  MW_STATUS_IO = 6,
  MW_STATUS_BUFFER_TOO_SMALL = 7,
  MW_STATUS_PANIC = 8,
} MwStatus;

// The optimized operating point of a system.
typedef struct MwResult MwResult;

// An impedance matrix at one frequency.
typedef struct MwSystem MwSystem;

// Scalar summary of a solve.
typedef struct MwSummary {
  // Power transfer efficiency of the returned operating point.
  double efficiency;
  // Unconstrained closed-form efficiency at the same load.
  double efficiency_unconstrained;
  double load_ohms;
  double optimal_load_ohms;
  // Receiver series reactance (ohms).
  double receiver_reactance;
  // Relaxation tightness error; 0 when the closed form was feasible.
  double tightness_error;
  size_t iterations;
  // True when the closed form already satisfied the constraints.
  bool skipped;
  bool tight;
} MwSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *mw_last_error(void);

// Library version as a static string.
const char *mw_version(void);

// Builds a preset loop geometry ("SISO", "MISO-2p", "MISO-3p", "MISO-2c",
// "MISO-3c") with the receiver `d_over_lambda` wavelengths away at
// `theta_deg` degrees.
//
// # Safety
// `preset` must be a NUL-terminated string and `out` a valid pointer.
enum MwStatus mw_system_from_preset(const char *preset,
                                    double d_over_lambda,
                                    double theta_deg,
                                    struct MwSystem **out);

// Wraps an `n × n` complex matrix given as row-major real and imaginary
// parts; the last port is the receiver.
//
// # Safety
// `re` and `im` must each point to `n * n` doubles; `out` must be valid.
enum MwStatus mw_system_from_matrix(size_t n,
                                    const double *re,
                                    const double *im,
                                    double frequency_hz,
                                    struct MwSystem **out);

// Loads an impedance matrix JSON file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum MwStatus mw_system_load(const char *path, struct MwSystem **out);

// Number of ports (transmitters plus receiver), or 0 for a null handle.
//
// # Safety
// `system` must be null or a live handle.
size_t mw_system_n_ports(const struct MwSystem *system);

// # Safety
// `system` must be null or a handle not yet freed.
void mw_system_free(struct MwSystem *system);

// Finds the most efficient operating point. `load_ohms > 0` fixes the load
// resistance, `0` uses the closed-form optimum and a negative value runs the
// outer load search. `constraints` is "none", "nonneg" or "caps=w1,w2,…";
// null means "nonneg".
//
// # Safety
// `system` must be a live handle, `constraints` null or NUL-terminated, and
// `out` a valid pointer.
enum MwStatus mw_solve(const struct MwSystem *system,
                       double load_ohms,
                       const char *constraints,
                       struct MwResult **out);

// # Safety
// `result` must be a live handle and `out` a valid pointer.
enum MwStatus mw_result_summary(const struct MwResult *result, struct MwSummary *out);

// Copies the per-transmitter input powers (W) into `buf`. `*written`
// receives the number of transmitters even when `len` is too small.
//
// # Safety
// `buf` must hold `len` doubles; `result` and `written` must be valid.
enum MwStatus mw_result_transmit_powers(const struct MwResult *result,
                                        double *buf,
                                        size_t len,
                                        size_t *written);

// Copies the port currents (A, phasor amplitudes) into `re`/`im`.
//
// # Safety
// `re` and `im` must each hold `len` doubles; other pointers must be valid.
enum MwStatus mw_result_currents(const struct MwResult *result,
                                 double *re,
                                 double *im,
                                 size_t len,
                                 size_t *written);

// The full result record as a JSON string; release with [`mw_string_free`].
//
// # Safety
// `result` must be a live handle and `out` a valid pointer.
enum MwStatus mw_result_json(const struct MwResult *result, char **out);

// # Safety
// `result` must be null or a handle not yet freed.
void mw_result_free(struct MwResult *result);

// # Safety
// `s` must be null or a string returned by this library and not yet freed.
void mw_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MISO_WPT_H */
