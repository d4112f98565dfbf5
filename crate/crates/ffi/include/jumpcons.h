#ifndef JUMPCONS_H
#define JUMPCONS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes; the non-zero values match the exit codes of the
 command-line tool where both exist.
 */
typedef enum JcStatus {
  JC_STATUS_OK = 0,
  /*
   A required pointer was null or a length did not match.
   */
  JC_STATUS_INVALID_ARGUMENT = 1,
  /*
   Invalid configuration, model or state.
   */
  JC_STATUS_SPEC = 2,
  /*
   Riccati blow-up or quadrature that did not converge.
   */
  JC_STATUS_NUMERIC = 3,
  /*
   Divergent jump integrals.
   */
  JC_STATUS_REGULARITY = 5,
  JC_STATUS_IO = 7,
  /*
   A Rust panic was caught at the boundary.
   */
  JC_STATUS_INTERNAL = 9,
} JcStatus;

/*
 Opaque session handle.
 */
typedef struct JcSession JcSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Builds a session from a NUL-terminated JSON configuration. On success
 `*out` receives a handle to release with [`jc_session_free`].

 # Safety
 `config_json` must be a valid C string and `out` a valid pointer.
 */
enum JcStatus jc_session_new(const char *config_json, struct JcSession **out);

/*
 Releases a session; null is ignored.

 # Safety
 `session` must come from [`jc_session_new`] and not be used afterwards.
 */
void jc_session_free(struct JcSession *session);

/*
 State dimension of the session's model, 0 for a null session.

 # Safety
 `session` must be null or a live handle.
 */
size_t jc_session_dim(const struct JcSession *session);

/*
 Forward rate `G(tau, x)` of the session's curve family.

 # Safety
 Pointers must be valid; `x` must hold `len` values.
 */
enum JcStatus jc_forward_rate(const struct JcSession *session,
                              double tau,
                              const double *x,
                              size_t len,
                              double *out);

/*
 Zero-coupon bond price `P(tau, x)` of the session's curve family.

 # Safety
 Pointers must be valid; `x` must hold `len` values.
 */
enum JcStatus jc_bond_price(const struct JcSession *session,
                            double tau,
                            const double *x,
                            size_t len,
                            double *out);

/*
 Consistency residual of the model and family at `(tau, x)`.

 # Safety
 Pointers must be valid; `x` must hold `len` values.
 */
enum JcStatus jc_consistency_residual(const struct JcSession *session,
                                      double tau,
                                      const double *x,
                                      size_t len,
                                      double *out);

/*
 Residuals over the configured grid: the largest absolute residual and
 whether it is below the configured tolerance (1) or not (0).

 # Safety
 Pointers must be valid.
 */
enum JcStatus jc_check(const struct JcSession *session, double *max_abs, int32_t *consistent);

/*
 Monte Carlo bond price of maturity `maturity` from `x`, discounting at
 the family's short rate. Uses the configured `dt` and `n_paths`.

 # Safety
 Pointers must be valid; `x` must hold `len` values.
 */
enum JcStatus jc_mc_bond_price(const struct JcSession *session,
                               const double *x,
                               size_t len,
                               double maturity,
                               uint64_t seed,
                               double *mean,
                               double *std_error);

/*
 z-score of the martingale test of `P(t, T) / B_t` from `x`, with the
 configured `t`, `maturity`, `dt` and `n_paths`.

 # Safety
 Pointers must be valid; `x` must hold `len` values.
 */
enum JcStatus jc_martingale_z(const struct JcSession *session,
                              const double *x,
                              size_t len,
                              uint64_t seed,
                              double *z_score);

/*
 Copies the calling thread's last error message into `buf` as a C
 string, truncated to `len - 1` bytes. Returns the full message length;
 0 means no error.

 # Safety
 `buf` must be null or writable for `len` bytes.
 */
size_t jc_last_error(char *buf, size_t len);

/*
 Library version as a static C string.
 */
const char *jc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JUMPCONS_H */
