#ifndef PATHNORM_H
#define PATHNORM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PnStatus {
  PN_STATUS_OK = 0,
  PN_STATUS_NULL_POINTER = 1,
  PN_STATUS_CONFIG = 2,
  PN_STATUS_STRUCTURE = 3,
  PN_STATUS_INPUT = 4,
  PN_STATUS_NUMERIC = 5,
  PN_STATUS_PARSE = 6,
  PN_STATUS_IO = 7,
  PN_STATUS_NO_CONVERGENCE = 8,
  PN_STATUS_CHECK_FAILED = 9,
  PN_STATUS_ALL_DIVERGED = 10,
  PN_STATUS_BUFFER_SIZE = 11,
  PN_STATUS_UTF8 = 12,
  PN_STATUS_PANIC = 13,
} PnStatus;

typedef enum PnOptimizerKind {
  PN_OPTIMIZER_KIND_SGD = 0,
  PN_OPTIMIZER_KIND_ADA_GRAD = 1,
  PN_OPTIMIZER_KIND_PATH_SGD = 2,
} PnOptimizerKind;

/**
 * Opaque network handle.
 */
typedef struct PnGraph PnGraph;

/**
 * Opaque optimizer handle.
 */
typedef struct PnOptimizer PnOptimizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pn_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len - 1` bytes). Returns the full message
 * length in bytes, 0 when there is none.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null with `len == 0`.
 */
size_t pn_last_error_message(char *buf, size_t len);

/**
 * Builds a DAG from `num_edges` (src, dst) pairs stored flat in `edges`.
 *
 * # Safety
 * Array arguments must be valid for the stated lengths; `out` must be
 * valid for writes.
 */
enum PnStatus pn_graph_new(size_t num_nodes,
                           const size_t *edges,
                           size_t num_edges,
                           const size_t *inputs,
                           size_t num_inputs,
                           const size_t *outputs,
                           size_t num_outputs,
                           struct PnGraph **out);

/**
 * Fully connected layered network with `num_layers` layer sizes.
 *
 * # Safety
 * `sizes` must be valid for `num_layers` reads; `out` valid for writes.
 */
enum PnStatus pn_graph_layered(const size_t *sizes, size_t num_layers, struct PnGraph **out);

/**
 * Reads a graph description file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for writes.
 */
enum PnStatus pn_graph_from_file(const char *path, struct PnGraph **out);

/**
 * Releases a graph. Null is ignored.
 *
 * # Safety
 * `g` must come from a `pn_graph_*` constructor and not be freed twice.
 */
void pn_graph_free(struct PnGraph *g);

/**
 * # Safety
 * `g` must be a live graph handle or null (returns 0).
 */
size_t pn_graph_num_nodes(const struct PnGraph *g);

/**
 * # Safety
 * `g` must be a live graph handle or null (returns 0).
 */
size_t pn_graph_num_edges(const struct PnGraph *g);

/**
 * Number of edges on the longest input-output path.
 *
 * # Safety
 * `g` must be a live graph handle or null (returns 0).
 */
size_t pn_graph_depth(const struct PnGraph *g);

/**
 * Endpoints of edge `edge`.
 *
 * # Safety
 * `g` must be a live graph handle; `src` and `dst` valid for writes.
 */
enum PnStatus pn_graph_edge(const struct PnGraph *g, size_t edge, size_t *src, size_t *dst);

/**
 * Fills `w` with the balanced Gaussian initialization for `seed`.
 *
 * # Safety
 * `w` must be valid for `len` writes.
 */
enum PnStatus pn_init_balanced(const struct PnGraph *g, uint64_t seed, double *w, size_t len);

/**
 * Applies `k` random unit rescalings (standard log-normal factors times
 * ten) to `w` in place.
 *
 * # Safety
 * `w` must be valid for `len` reads and writes.
 */
enum PnStatus pn_unbalance(const struct PnGraph *g, double *w, size_t len, size_t k, uint64_t seed);

/**
 * Multiplies the edges into hidden unit `node` by `c` and divides the
 * edges out of it by `c`.
 *
 * # Safety
 * `w` must be valid for `len` reads and writes.
 */
enum PnStatus pn_apply_rescaling(const struct PnGraph *g,
                                 double *w,
                                 size_t len,
                                 size_t node,
                                 double c);

/**
 * ℓp path norm.
 *
 * # Safety
 * `w` must be valid for `len` reads; `out` valid for a write.
 */
enum PnStatus pn_path_norm(const struct PnGraph *g,
                           const double *w,
                           size_t len,
                           double p,
                           double *out);

/**
 * Group norm μ_{p,q}; pass `q = INFINITY` for the per-unit maximum.
 *
 * # Safety
 * `w` must be valid for `len` reads; `out` valid for a write.
 */
enum PnStatus pn_group_norm(const struct PnGraph *g,
                            const double *w,
                            size_t len,
                            double p,
                            double q,
                            double *out);

/**
 * Per-edge Path-SGD scaling γ written to `gamma`.
 *
 * # Safety
 * `w` and `gamma` must be valid for `len` elements.
 */
enum PnStatus pn_compute_gamma(const struct PnGraph *g,
                               const double *w,
                               size_t len,
                               double p,
                               double *gamma);

/**
 * Output scores for one input row.
 *
 * # Safety
 * `w` valid for `len`, `x` for `x_len`, `scores` for `scores_len`
 * elements.
 */
enum PnStatus pn_forward(const struct PnGraph *g,
                         const double *w,
                         size_t len,
                         const double *x,
                         size_t x_len,
                         double *scores,
                         size_t scores_len);

/**
 * Mean softmax cross-entropy of a batch of `rows x dim` inputs and its
 * gradient.
 *
 * # Safety
 * `inputs` valid for `rows * dim`, `labels` for `rows`, `w` and `grad`
 * for `len` elements; `loss` valid for a write.
 */
enum PnStatus pn_loss_and_grad(const struct PnGraph *g,
                               const double *w,
                               size_t len,
                               const double *inputs,
                               const size_t *labels,
                               size_t rows,
                               size_t dim,
                               double *loss,
                               double *grad);

/**
 * Optimizer for a graph with `num_edges` edges; `p` is used by Path-SGD
 * only.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum PnStatus pn_optimizer_new(enum PnOptimizerKind kind,
                               double step_size,
                               double p,
                               size_t num_edges,
                               struct PnOptimizer **out);

/**
 * One update of `w` in place from `grad`.
 *
 * # Safety
 * `opt` and `g` must be live handles; `w` and `grad` valid for `len`
 * elements.
 */
enum PnStatus pn_optimizer_step(struct PnOptimizer *opt,
                                const struct PnGraph *g,
                                double *w,
                                const double *grad,
                                size_t len);

/**
 * Path-SGD edges clamped at the γ floor so far.
 *
 * # Safety
 * `opt` must be a live handle or null (returns 0).
 */
uint64_t pn_optimizer_clamped_edges(const struct PnOptimizer *opt);

/**
 * Releases an optimizer. Null is ignored.
 *
 * # Safety
 * `opt` must come from [`pn_optimizer_new`] and not be freed twice.
 */
void pn_optimizer_free(struct PnOptimizer *opt);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATHNORM_H */
