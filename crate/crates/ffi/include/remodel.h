#ifndef REMODEL_H
#define REMODEL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define REMODEL_OK 0

// A required pointer argument was null or a string was not UTF-8.
#define REMODEL_ERR_ARGUMENT 1

// Invalid configuration or request.
#define REMODEL_ERR_CONFIG 2

// Degenerate input: singular fiber, pole, collision.
#define REMODEL_ERR_DEGENERATE 3

// Numerical failure: truncation, convergence, ε-degree.
#define REMODEL_ERR_NUMERIC 4

// A panic was caught at the boundary.
#define REMODEL_ERR_PANIC 5

// Opaque engine handle: one modular parameter and its memoized forms.
typedef struct RemodelEngine RemodelEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty after a success. The
// pointer stays valid until the next call into the library on this thread.
const char *remodel_last_error(void);

// Releases a string returned by the library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void remodel_string_free(char *s);

// Creates an engine at τ = tau_re + i·tau_im with default settings.
// `trunc_extra` raises (or lowers) the series order of every ω_{g,n}.
int32_t remodel_engine_new(double tau_re,
                           double tau_im,
                           int32_t trunc_extra,
                           struct RemodelEngine **out);

// Releases an engine. Null is ignored.
//
// # Safety
// `e` must come from [`remodel_engine_new`] and not have been freed.
void remodel_engine_free(struct RemodelEngine *e);

// Moduli data (q, κ, g₂, g₃, both j) as JSON.
int32_t remodel_curve_json(const struct RemodelEngine *e, char **out);

// The nine ramification points as a JSON array.
int32_t remodel_ramification_json(const struct RemodelEngine *e, char **out);

// ω_{g,n} as JSON in the anchor basis.
int32_t remodel_omega_json(const struct RemodelEngine *e, uint32_t g, uint32_t n, char **out);

// ω_{g,n}(u₁,…,u_n) at ε = eps_re + i·eps_im; `us_re`/`us_im` hold n entries.
int32_t remodel_omega_eval(const struct RemodelEngine *e,
                           uint32_t g,
                           uint32_t n,
                           const double *us_re,
                           const double *us_im,
                           double eps_re,
                           double eps_im,
                           double *out_re,
                           double *out_im);

// F_g as an ε-polynomial in JSON, together with F̂_g (ε = π/Im τ) and the
// holomorphic limit.
int32_t remodel_free_energy_json(const struct RemodelEngine *e, uint32_t g, char **out);

// One open invariant N^{d}_{k} with open mirror-map constant A.
// `degrees` and `twists` hold n entries each.
int32_t remodel_open_invariant(const struct RemodelEngine *e,
                               uint32_t g,
                               uint32_t n,
                               const uint32_t *degrees,
                               const uint32_t *twists,
                               double a_re,
                               double a_im,
                               double *out_re,
                               double *out_im);

// Runs the command-line driver on `argv[0..argc]` (without the program
// name) and returns its standard output. `status` receives the exit code
// the CLI would use; the diagnostic of a nonzero status is available from
// [`remodel_last_error`].
//
// # Safety
// `argv` must point to `argc` valid NUL-terminated strings.
int32_t remodel_cli_run(size_t argc, const char *const *argv, char **out, int32_t *status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REMODEL_H */
