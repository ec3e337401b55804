#ifndef SCGLM_H
#define SCGLM_H

/* Generated by cbindgen from crates/scglm-ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ScglmBackend {
  SCGLM_BACKEND_DENSE = 0,
  SCGLM_BACKEND_DCT = 1,
} ScglmBackend;

typedef enum ScglmChannelKind {
  SCGLM_CHANNEL_KIND_PHASE_RETRIEVAL = 0,
  SCGLM_CHANNEL_KIND_PHASE_RETRIEVAL_NOISY = 1,
  SCGLM_CHANNEL_KIND_RELU = 2,
  SCGLM_CHANNEL_KIND_LINEAR = 3,
} ScglmChannelKind;

typedef enum ScglmStatus {
  SCGLM_STATUS_OK = 0,
  SCGLM_STATUS_INVALID_ARGUMENT = 1,
  SCGLM_STATUS_BASE_MATRIX = 2,
  SCGLM_STATUS_UNSUPPORTED_CHANNEL = 3,
  SCGLM_STATUS_DEGENERATE = 4,
  SCGLM_STATUS_NON_FINITE = 5,
  SCGLM_STATUS_CONFIG = 6,
  SCGLM_STATUS_IO = 7,
  SCGLM_STATUS_SERIALIZATION = 8,
  SCGLM_STATUS_NULL_POINTER = 9,
  SCGLM_STATUS_PANIC = 10,
} ScglmStatus;

typedef struct ScglmBase ScglmBase;

typedef struct ScglmPotential ScglmPotential;

typedef struct ScglmPrior ScglmPrior;

// Output channel; `sigma2` is ignored by the noiseless kinds.
typedef struct ScglmChannel {
  enum ScglmChannelKind kind;
  double sigma2;
} ScglmChannel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *scglm_version(void);

// Message of the last failed call on this thread. Valid until the next
// failing call on the same thread; empty if none failed.
const char *scglm_last_error(void);

// Two-point prior with unit variance, P(X = +a) = alpha.
//
// # Safety
// `out` must be a valid pointer to write a handle to.
enum ScglmStatus scglm_prior_two_point(double alpha, struct ScglmPrior **out);

// Symmetric three-point prior {-b, 0, b}, P(X != 0) = alpha.
//
// # Safety
// `out` must be a valid pointer to write a handle to.
enum ScglmStatus scglm_prior_three_point(double alpha, struct ScglmPrior **out);

// Discrete prior from `len` atoms and probabilities.
//
// # Safety
// `atoms` and `probs` must point to `len` doubles; `out` must be writable.
enum ScglmStatus scglm_prior_custom(const double *atoms,
                                    const double *probs,
                                    uintptr_t len,
                                    struct ScglmPrior **out);

// # Safety
// `prior` must come from a `scglm_prior_*` constructor, or be null.
void scglm_prior_free(struct ScglmPrior *prior);

// mmse(s) of the scalar channel sqrt(s) X + G.
//
// # Safety
// Pointers must be valid.
enum ScglmStatus scglm_prior_mmse(const struct ScglmPrior *prior, double s, double *out);

// Posterior mean and variance of X given X + sqrt(tau) G = q.
//
// # Safety
// Pointers must be valid.
enum ScglmStatus scglm_prior_posterior(const struct ScglmPrior *prior,
                                       double q,
                                       double tau,
                                       double *mean,
                                       double *var);

// g_out*(p, y; tau) and its derivative in p.
//
// # Safety
// `g` and `dg` must be writable.
enum ScglmStatus scglm_channel_gout(struct ScglmChannel channel,
                                    double p,
                                    double y,
                                    double tau,
                                    double *g,
                                    double *dg);

// # Safety
// `out` must be writable.
enum ScglmStatus scglm_base_iid(struct ScglmBase **out);

// (omega, lambda) base matrix with lambda + omega - 1 row blocks.
//
// # Safety
// `out` must be writable.
enum ScglmStatus scglm_base_omega_lambda(uintptr_t omega, uintptr_t lambda, struct ScglmBase **out);

// # Safety
// `base` must come from a `scglm_base_*` constructor, or be null.
void scglm_base_free(struct ScglmBase *base);

// Number of row blocks R and column blocks C.
//
// # Safety
// Pointers must be valid.
enum ScglmStatus scglm_base_shape(const struct ScglmBase *base, uintptr_t *rows, uintptr_t *cols);

// m = R round(delta n / R) and the effective ratio m / n.
//
// # Safety
// Output pointers must be writable.
enum ScglmStatus scglm_adjusted_rows(double delta,
                                     uintptr_t n,
                                     uintptr_t rows,
                                     uintptr_t *m,
                                     double *effective_delta);

// Run block-wise Bayes state evolution to convergence.
//
// # Safety
// Pointers must be valid; `iterations` may be null.
enum ScglmStatus scglm_se_run(const struct ScglmBase *base,
                              const struct ScglmPrior *prior,
                              struct ScglmChannel channel,
                              double delta,
                              double tol,
                              uintptr_t max_iter,
                              double *final_mse,
                              uintptr_t *iterations);

// Potential U(x; delta) on `points` equispaced x in [x_min, x_max].
//
// # Safety
// Pointers must be valid.
enum ScglmStatus scglm_potential_new(const struct ScglmPrior *prior,
                                     struct ScglmChannel channel,
                                     double delta,
                                     uintptr_t points,
                                     double x_min,
                                     double x_max,
                                     struct ScglmPotential **out);

// # Safety
// `pot` must come from `scglm_potential_new`, or be null.
void scglm_potential_free(struct ScglmPotential *pot);

// Number of grid points.
//
// # Safety
// `pot` must be a valid handle or null (returns 0).
uintptr_t scglm_potential_len(const struct ScglmPotential *pot);

// Copy grid x and U values into caller buffers of length `len`
// (must equal `scglm_potential_len`). `is_stationary` may be null.
//
// # Safety
// Buffers must hold `len` elements.
enum ScglmStatus scglm_potential_copy(const struct ScglmPotential *pot,
                                      double *x,
                                      double *u,
                                      uint8_t *is_stationary,
                                      uintptr_t len);

// Grid global minimizer and largest stationary point.
//
// # Safety
// Pointers must be valid.
enum ScglmStatus scglm_potential_summary(const struct ScglmPotential *pot,
                                         double *global_minimizer,
                                         double *largest_stationary);

// One SC-GAMP trial: draw the operator, signal and outputs from the seeds,
// run to convergence and report the final MSE.
//
// # Safety
// Pointers must be valid; `iterations` may be null.
enum ScglmStatus scglm_gamp_trial(const struct ScglmBase *base,
                                  const struct ScglmPrior *prior,
                                  struct ScglmChannel channel,
                                  enum ScglmBackend backend,
                                  uintptr_t m,
                                  uintptr_t n,
                                  uint64_t operator_seed,
                                  uint64_t signal_seed,
                                  uint64_t noise_seed,
                                  uintptr_t max_iter,
                                  double rel_tol,
                                  double *final_mse,
                                  uintptr_t *iterations);

// Run a harness command ("potential", "se", "run", "figure2", "figure3",
// "figure4") with a TOML config, writing CSVs and the JSON sidecar.
//
// # Safety
// Both arguments must be NUL-terminated strings.
enum ScglmStatus scglm_execute(const char *command, const char *config_toml);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCGLM_H */
