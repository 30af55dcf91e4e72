#ifndef CPFOPT_H
#define CPFOPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; numerically aligned with the CLI exit codes where they overlap.
 */
typedef enum CpfStatus {
  CPF_STATUS_OK = 0,
  CPF_STATUS_NULL_POINTER = 1,
  CPF_STATUS_INVALID_ARGUMENT = 2,
  CPF_STATUS_NUMERICAL = 3,
  CPF_STATUS_ORACLE_UNAVAILABLE = 4,
  CPF_STATUS_INVALID_UTF8 = 5,
  CPF_STATUS_PANIC = 6,
} CpfStatus;

/**
 * A parsed and validated run manifest.
 */
typedef struct CpfManifest CpfManifest;

/**
 * The log of one simulation.
 */
typedef struct CpfTrajectory CpfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a
 * success. The pointer stays valid until the next call on this thread.
 */
const char *cpf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cpf_version(void);

/**
 * Parses a TOML manifest and validates every section.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CpfStatus cpf_manifest_from_toml(const char *toml, struct CpfManifest **out);

/**
 * # Safety
 * `manifest` must come from `cpf_manifest_from_toml` or be null.
 */
void cpf_manifest_free(struct CpfManifest *manifest);

/**
 * Replaces the master seed.
 *
 * # Safety
 * `manifest` must be a live handle.
 */
enum CpfStatus cpf_manifest_set_seed(struct CpfManifest *manifest, uint64_t seed);

/**
 * Runs the configured simulation.
 *
 * # Safety
 * `manifest` must be a live handle and `out` a valid pointer.
 */
enum CpfStatus cpf_run(const struct CpfManifest *manifest, struct CpfTrajectory **out);

/**
 * # Safety
 * `traj` must come from `cpf_run` or be null.
 */
void cpf_trajectory_free(struct CpfTrajectory *traj);

/**
 * Number of logged times (steps + 1 unless stopped early); 0 for null.
 *
 * # Safety
 * `traj` must be a live handle or null.
 */
size_t cpf_trajectory_len(const struct CpfTrajectory *traj);

/**
 * # Safety
 * `traj` must be a live handle or null.
 */
size_t cpf_trajectory_dim(const struct CpfTrajectory *traj);

/**
 * `len` times. Borrowed; valid while `traj` lives.
 *
 * # Safety
 * `traj` must be a live handle or null.
 */
const double *cpf_trajectory_times(const struct CpfTrajectory *traj);

/**
 * `len` values of the empirical mean of h.
 *
 * # Safety
 * `traj` must be a live handle or null.
 */
const double *cpf_trajectory_hhat(const struct CpfTrajectory *traj);

/**
 * `len × dim` ensemble means.
 *
 * # Safety
 * `traj` must be a live handle or null.
 */
const double *cpf_trajectory_means(const struct CpfTrajectory *traj);

/**
 * `len` covariance traces.
 *
 * # Safety
 * `traj` must be a live handle or null.
 */
const double *cpf_trajectory_cov_trace(const struct CpfTrajectory *traj);

/**
 * Final `N × dim` particle positions; `*count` receives `N`.
 *
 * # Safety
 * `traj` must be a live handle or null; `count` must be valid or null.
 */
const double *cpf_trajectory_final_positions(const struct CpfTrajectory *traj, size_t *count);

/**
 * Exact posterior moments at time `t` for `h(x) = ½(x − x̄)ᵀH(x − x̄)` and
 * prior `N(m0, s0)`. `m0`, `xbar`, `m_out` hold `d` values; `s0`, `hessian`,
 * `s_out` hold `d × d`.
 *
 * # Safety
 * Every pointer must address the stated number of doubles.
 */
enum CpfStatus cpf_qg_exact(size_t d,
                            const double *m0,
                            const double *s0,
                            const double *hessian,
                            const double *xbar,
                            double beta,
                            double t,
                            double *m_out,
                            double *s_out);

/**
 * Affine control for `n` particles: `positions` is `n × d`, `h_values` has
 * `n` entries. Writes `n × d` controls, the `d × d` gain and the `d` offset;
 * `gain_out` and `offset_out` may be null.
 *
 * # Safety
 * Every non-null pointer must address the stated number of doubles.
 */
enum CpfStatus cpf_affine_gain(size_t n,
                               size_t d,
                               const double *positions,
                               const double *h_values,
                               double beta,
                               double *controls_out,
                               double *gain_out,
                               double *offset_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPFOPT_H */
