#ifndef GEOWORLD_H
#define GEOWORLD_H

#include <stddef.h>
#include <stdint.h>

// Result codes. `GW_STATUS_OK` is zero.
typedef enum GwStatus {
  GW_STATUS_OK = 0,
  GW_STATUS_INVALID_ARGUMENT = 1,
  GW_STATUS_CONTRACT = 2,
  GW_STATUS_NUMERICAL = 3,
  GW_STATUS_CONFIG = 4,
  GW_STATUS_IO = 5,
  GW_STATUS_FORMAT = 6,
  GW_STATUS_NULL_POINTER = 7,
  GW_STATUS_PANIC = 8,
} GwStatus;

typedef enum GwFactorKind {
  // A circle `R / kZ`; the parameter is `k`.
  GW_FACTOR_KIND_CIRCLE = 0,
  // A Euclidean block; the parameter is its dimension.
  GW_FACTOR_KIND_EUCLIDEAN = 1,
} GwFactorKind;

typedef enum GwMetric {
  GW_METRIC_L1 = 0,
  GW_METRIC_L2 = 1,
} GwMetric;

// Opaque latent space handle.
typedef struct GwLatentSpace GwLatentSpace;

// Opaque environment handle.
typedef struct GwMdp GwMdp;

// Opaque world model handle.
typedef struct GwModel GwModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *gw_last_error(void);

// Library version as a static NUL-terminated string.
const char *gw_version(void);

// Reduce `x` into `[0, k)`.
//
// # Safety
// `result` must be a valid pointer to a double.
enum GwStatus gw_wrap(double x, double k, double *result);

// Build a latent space from `n` factors.
//
// # Safety
// `kinds` and `params` must point to `n` elements; `space` must be writable.
enum GwStatus gw_space_new(const enum GwFactorKind *kinds,
                           const double *params,
                           size_t n,
                           struct GwLatentSpace **space);

// # Safety
// `space` must come from `gw_space_new` and not be used afterwards. Null is ignored.
void gw_space_free(struct GwLatentSpace *space);

// # Safety
// `space` must be a live handle and `dim` writable.
enum GwStatus gw_space_dim(const struct GwLatentSpace *space, size_t *dim);

// `result = z ⊕ delta`; all arrays have the space's dimension.
//
// # Safety
// Arrays must hold `gw_space_dim` doubles.
enum GwStatus gw_space_oplus(const struct GwLatentSpace *space,
                             const double *z,
                             const double *delta,
                             double *result);

// `a - b` per coordinate, circular coordinates reduced to `[-k/2, k/2)`.
//
// # Safety
// Arrays must hold `gw_space_dim` doubles.
enum GwStatus gw_space_signed_diff(const struct GwLatentSpace *space,
                                   const double *a,
                                   const double *b,
                                   double *result);

// # Safety
// `a` and `b` must hold `gw_space_dim` doubles; `result` must be writable.
enum GwStatus gw_space_distance(const struct GwLatentSpace *space,
                                const double *a,
                                const double *b,
                                enum GwMetric metric,
                                double *result);

// # Safety
// `mdp` must be writable.
enum GwStatus gw_mdp_passage(size_t n, struct GwMdp **mdp);

// # Safety
// `mdp` must be writable.
enum GwStatus gw_mdp_torus(size_t n, struct GwMdp **mdp);

// Orientation gridworld; `exclude_walls` nonzero marks wall bumps invalid.
//
// # Safety
// `mdp` must be writable.
enum GwStatus gw_mdp_grid(size_t n, int32_t exclude_walls, struct GwMdp **mdp);

// # Safety
// `mdp` must come from a `gw_mdp_*` constructor. Null is ignored.
void gw_mdp_free(struct GwMdp *mdp);

// # Safety
// Pointers must be valid.
enum GwStatus gw_mdp_sizes(const struct GwMdp *mdp, size_t *n_states, size_t *n_actions);

// # Safety
// Pointers must be valid.
enum GwStatus gw_mdp_step(const struct GwMdp *mdp,
                          size_t s,
                          size_t a,
                          size_t *next,
                          double *reward);

// Untrained world model for `mdp` over `space`, without masks.
//
// # Safety
// Handles must be live and `model` writable.
enum GwStatus gw_model_new(const struct GwMdp *mdp,
                           const struct GwLatentSpace *space,
                           uint64_t seed,
                           struct GwModel **model);

// Replace the model's parameters with a checkpoint written by the CLI.
//
// # Safety
// `model` must be live; `path` a NUL-terminated UTF-8 string.
enum GwStatus gw_model_load(struct GwModel *model, const char *path);

// # Safety
// `model` must come from `gw_model_new`. Null is ignored.
void gw_model_free(struct GwModel *model);

// Latent of state `s`; `z` receives the latent dimension.
//
// # Safety
// Handles must be live; `z` must hold the model's latent dimension.
enum GwStatus gw_model_encode(const struct GwModel *model,
                              const struct GwMdp *mdp,
                              size_t s,
                              double *z);

// `next = z ⊕ Δ(z, a)`.
//
// # Safety
// `z` and `next` must hold the model's latent dimension.
enum GwStatus gw_model_predict_next(const struct GwModel *model,
                                    const double *z,
                                    size_t a,
                                    double *next);

// Fraction of `ranks` at most `k`.
//
// # Safety
// `ranks` must hold `n` values.
enum GwStatus gw_hits_at_k(const size_t *ranks, size_t n, size_t k, double *result);

// Mean reciprocal rank.
//
// # Safety
// `ranks` must hold `n` values.
enum GwStatus gw_mrr(const size_t *ranks, size_t n, double *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOWORLD_H */
