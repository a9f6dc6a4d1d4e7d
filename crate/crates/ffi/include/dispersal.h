#ifndef DISPERSAL_H
#define DISPERSAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. `DISPERSAL_STATUS_OK` is zero.
typedef enum DispersalStatus {
  DISPERSAL_STATUS_OK = 0,
  DISPERSAL_STATUS_NULL_POINTER = 1,
  DISPERSAL_STATUS_INVALID_ARGUMENT = 2,
  DISPERSAL_STATUS_HABITAT = 3,
  DISPERSAL_STATUS_NON_CONVERGENCE = 4,
  DISPERSAL_STATUS_NON_EXISTENCE = 5,
  DISPERSAL_STATUS_NUMERICAL = 6,
  DISPERSAL_STATUS_BUFFER_TOO_SMALL = 7,
  DISPERSAL_STATUS_PANIC = 8,
} DispersalStatus;

// Problem definition: habitat, trait range and mutation strength.
typedef struct DispersalModel DispersalModel;

// Converged steady state of a model.
typedef struct DispersalSteadyState DispersalSteadyState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *dispersal_last_error(void);

// Library version as a static NUL-terminated string.
const char *dispersal_version(void);

// One-dimensional model on `(0, length)` with `cells` cells. `m` holds the
// habitat at the `cells + 1` nodes. `trait_cells = 0` picks a layer-resolving
// trait grid. Constant `m` is accepted only when `trivial` is true.
//
// # Safety
// `m` must point to `cells + 1` readable doubles and `out` to writable storage
// for one pointer.
enum DispersalStatus dispersal_model_new(const double *m,
                                         size_t cells,
                                         double length,
                                         double alpha_lo,
                                         double alpha_hi,
                                         double epsilon,
                                         size_t trait_cells,
                                         bool trivial,
                                         struct DispersalModel **out);

// Default configuration: `(0, 1)`, 96 cells, `m = 1 + cos(πx)/2`,
// traits in `[0.5, 2]`.
//
// # Safety
// `out` must be writable storage for one pointer.
enum DispersalStatus dispersal_model_new_default(double epsilon, struct DispersalModel **out);

// # Safety
// `model` must come from a `dispersal_model_new*` call and not be freed twice.
void dispersal_model_free(struct DispersalModel *model);

// Spatial and trait node counts of the model.
//
// # Safety
// `model` must be a live handle; outputs must be writable.
enum DispersalStatus dispersal_model_dims(const struct DispersalModel *model,
                                          size_t *spatial_nodes,
                                          size_t *trait_nodes);

// Principal eigenvalue `μ₁` of the linearization at zero. A positive steady
// state exists exactly when it is negative.
//
// # Safety
// `model` must be a live handle; `mu1` must be writable.
enum DispersalStatus dispersal_model_mu1(const struct DispersalModel *model, double *mu1);

// Solves for the positive steady state.
//
// # Safety
// `model` must be a live handle; `out` must be writable storage for one pointer.
enum DispersalStatus dispersal_steady_state_solve(const struct DispersalModel *model,
                                                  struct DispersalSteadyState **out);

// # Safety
// `state` must come from [`dispersal_steady_state_solve`] and not be freed twice.
void dispersal_steady_state_free(struct DispersalSteadyState *state);

// Sup-norm residual of the converged state.
//
// # Safety
// `state` must be a live handle; `residual` must be writable.
enum DispersalStatus dispersal_steady_state_residual(const struct DispersalSteadyState *state,
                                                     double *residual);

// Copies the density, space-major with the trait index contiguous, into
// `buf` of capacity `len`.
//
// # Safety
// `state` must be a live handle; `buf` must have room for `len` doubles.
enum DispersalStatus dispersal_steady_state_density(const struct DispersalSteadyState *state,
                                                    double *buf,
                                                    size_t len);

// Copies the trait-integrated density `û` into `buf` of capacity `len`.
//
// # Safety
// `state` must be a live handle; `buf` must have room for `len` doubles.
enum DispersalStatus dispersal_steady_state_total(const struct DispersalSteadyState *state,
                                                  double *buf,
                                                  size_t len);

// `A₀`, the absolute value of the first negative zero of `Ai'`.
//
// # Safety
// `out` must be writable.
enum DispersalStatus dispersal_airy_a0(double *out);

// `Ai(x)` for `|x| ≤ 20`.
//
// # Safety
// `out` must be writable.
enum DispersalStatus dispersal_airy_ai(double x, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISPERSAL_H */
