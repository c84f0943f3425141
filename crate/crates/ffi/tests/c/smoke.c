#include <math.h>
#include <stdio.h>
#include <string.h>
#include "geoworld.h"

#define CHECK(call)                                                   \
  do {                                                                \
    GwStatus st_ = (call);                                            \
    if (st_ != GW_STATUS_OK) {                                        \
      fprintf(stderr, "%s failed: %d %s\n", #call, st_, gw_last_error()); \
      return 1;                                                       \
    }                                                                 \
  } while (0)

int main(void) {
  const double two_pi = 6.283185307179586;
  GwFactorKind kinds[2] = {GW_FACTOR_KIND_CIRCLE, GW_FACTOR_KIND_CIRCLE};
  double params[2] = {two_pi, two_pi};
  GwLatentSpace *space = NULL;
  CHECK(gw_space_new(kinds, params, 2, &space));

  size_t dim = 0;
  CHECK(gw_space_dim(space, &dim));
  if (dim != 2) return 2;

  double z[2] = {6.0, 1.0}, delta[2] = {0.5, -2.0}, out[2];
  CHECK(gw_space_oplus(space, z, delta, out));
  if (fabs(out[0] - (6.5 - two_pi)) > 1e-12 || fabs(out[1] - (two_pi - 1.0)) > 1e-12) return 3;

  double a[2] = {0.1, 0.0}, b[2] = {two_pi - 0.1, 0.0}, d = 0.0;
  CHECK(gw_space_distance(space, a, b, GW_METRIC_L1, &d));
  if (fabs(d - 0.2) > 1e-12) return 4;

  GwMdp *mdp = NULL;
  CHECK(gw_mdp_torus(5, &mdp));
  size_t ns = 0, na = 0;
  CHECK(gw_mdp_sizes(mdp, &ns, &na));
  if (ns != 25 || na != 2) return 5;

  GwModel *model = NULL;
  CHECK(gw_model_new(mdp, space, 7, &model));
  double zs[2], zn[2];
  CHECK(gw_model_encode(model, mdp, 3, zs));
  CHECK(gw_model_predict_next(model, zs, 1, zn));

  if (gw_model_predict_next(model, zs, 9, zn) != GW_STATUS_CONTRACT) return 6;
  if (strlen(gw_last_error()) == 0) return 7;
  if (gw_space_dim(NULL, &dim) != GW_STATUS_NULL_POINTER) return 8;

  size_t ranks[4] = {1, 2, 1, 4};
  double h1 = 0.0, m = 0.0;
  CHECK(gw_hits_at_k(ranks, 4, 1, &h1));
  CHECK(gw_mrr(ranks, 4, &m));
  if (fabs(h1 - 0.5) > 1e-12 || fabs(m - (1.0 + 0.5 + 1.0 + 0.25) / 4.0) > 1e-12) return 9;

  gw_model_free(model);
  gw_mdp_free(mdp);
  gw_space_free(space);
  printf("ok %s\n", gw_version());
  return 0;
}
