#include <math.h>
#include <stdio.h>

#include "pathnorm.h"

#define CHECK(call)                                                    \
  do {                                                                 \
    PnStatus s_ = (call);                                              \
    if (s_ != PN_STATUS_OK) {                                          \
      char msg_[256];                                                  \
      pn_last_error_message(msg_, sizeof msg_);                        \
      fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_, msg_);   \
      return 1;                                                        \
    }                                                                  \
  } while (0)

int main(void) {
  size_t sizes[] = {1, 2, 1};
  PnGraph *g = NULL;
  CHECK(pn_graph_layered(sizes, 3, &g));
  if (pn_graph_num_edges(g) != 4 || pn_graph_depth(g) != 2) return 2;

  double w[4] = {1.0, 2.0, 3.0, 4.0};
  double phi = 0.0;
  CHECK(pn_path_norm(g, w, 4, 2.0, &phi));
  if (fabs(phi - sqrt(73.0)) > 1e-12) return 3;

  double gamma[4];
  CHECK(pn_compute_gamma(g, w, 4, 2.0, gamma));
  if (gamma[0] != 9.0 || gamma[2] != 1.0) return 4;

  if (pn_apply_rescaling(g, w, 4, 0, 2.0) != PN_STATUS_INPUT) return 5;
  char msg[128];
  if (pn_last_error_message(msg, sizeof msg) == 0) return 6;

  pn_graph_free(g);
  printf("pathnorm %s ok\n", pn_version());
  return 0;
}
