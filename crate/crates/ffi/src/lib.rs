//! C ABI over the `pathnorm` crate.
//!
//! Graphs and optimizers are opaque heap handles created by `pn_*_new`
//! functions and released with the matching `pn_*_free`. Every fallible
//! function returns a [`PnStatus`]; on failure the message is kept per
//! thread and can be copied out with [`pn_last_error_message`]. Weight,
//! gradient and γ buffers are caller-owned arrays of `double` in edge-id
//! order. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use pathnorm::graph::{compute_levels, LevelSets};
use pathnorm::init::init_balanced;
use pathnorm::netfwd::{forward, loss_and_grad, Batch};
use pathnorm::optim::{compute_gamma, OptimizerKind, OptimizerState};
use pathnorm::pathnorms::{group_norm, path_norm_dp, GroupNormParams};
use pathnorm::rescale::{rescale_in_place, unbalance, LogNormalParams, RescalingOp};
use pathnorm::{Error, NetworkGraph, WeightVector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Structure = 3,
    Input = 4,
    Numeric = 5,
    Parse = 6,
    Io = 7,
    NoConvergence = 8,
    CheckFailed = 9,
    AllDiverged = 10,
    BufferSize = 11,
    Utf8 = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnOptimizerKind {
    Sgd = 0,
    AdaGrad = 1,
    PathSgd = 2,
}

/// Opaque network handle.
pub struct PnGraph {
    graph: NetworkGraph,
    levels: LevelSets,
}

/// Opaque optimizer handle.
pub struct PnOptimizer {
    state: OptimizerState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) => PnStatus::Config,
            Error::Structure(_) => PnStatus::Structure,
            Error::Input(_) => PnStatus::Input,
            Error::Numeric { .. } => PnStatus::Numeric,
            Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => PnStatus::Parse,
            Error::Io { .. } => PnStatus::Io,
            Error::NoConvergence { .. } => PnStatus::NoConvergence,
            Error::CheckFailed { .. } => PnStatus::CheckFailed,
            Error::AllDiverged { .. } => PnStatus::AllDiverged,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PnStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PnStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PnStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn graph_ref<'a>(g: *const PnGraph) -> Result<&'a PnGraph, Failure> {
    g.as_ref().ok_or_else(|| null("graph"))
}

fn check_len(len: usize, expected: usize, what: &str) -> Result<(), Failure> {
    if len != expected {
        return Err(Failure(
            PnStatus::BufferSize,
            format!("`{what}` has {len} entries, expected {expected}"),
        ));
    }
    Ok(())
}

unsafe fn weights_of(g: &PnGraph, w: *const f64, len: usize) -> Result<WeightVector, Failure> {
    check_len(len, g.graph.num_edges(), "weights")?;
    Ok(WeightVector::new(slice_in(w, len, "weights")?.to_vec()))
}

fn into_handle(graph: NetworkGraph, out: *mut *mut PnGraph) -> Result<(), Failure> {
    let levels = compute_levels(&graph);
    let boxed = Box::new(PnGraph { graph, levels });
    // SAFETY: caller guarantees `out` is valid for writes; checked non-null.
    unsafe { *out = Box::into_raw(boxed) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len - 1` bytes). Returns the full message
/// length in bytes, 0 when there is none.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn pn_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Builds a DAG from `num_edges` (src, dst) pairs stored flat in `edges`.
///
/// # Safety
/// Array arguments must be valid for the stated lengths; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pn_graph_new(
    num_nodes: usize,
    edges: *const usize,
    num_edges: usize,
    inputs: *const usize,
    num_inputs: usize,
    outputs: *const usize,
    num_outputs: usize,
    out: *mut *mut PnGraph,
) -> PnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let flat = slice_in(edges, 2 * num_edges, "edges")?;
        let pairs: Vec<(usize, usize)> = flat.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        let g = NetworkGraph::new(
            num_nodes,
            &pairs,
            slice_in(inputs, num_inputs, "inputs")?,
            slice_in(outputs, num_outputs, "outputs")?,
        )?;
        into_handle(g, out)
    })
}

/// Fully connected layered network with `num_layers` layer sizes.
///
/// # Safety
/// `sizes` must be valid for `num_layers` reads; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pn_graph_layered(sizes: *const usize, num_layers: usize, out: *mut *mut PnGraph) -> PnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let g = NetworkGraph::layered(slice_in(sizes, num_layers, "sizes")?)?;
        into_handle(g, out)
    })
}

/// Reads a graph description file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pn_graph_from_file(path: *const c_char, out: *mut *mut PnGraph) -> PnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|e| Failure(PnStatus::Utf8, format!("path is not UTF-8: {e}")))?;
        into_handle(NetworkGraph::from_file(path)?, out)
    })
}

/// Releases a graph. Null is ignored.
///
/// # Safety
/// `g` must come from a `pn_graph_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pn_graph_free(g: *mut PnGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// # Safety
/// `g` must be a live graph handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn pn_graph_num_nodes(g: *const PnGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.num_nodes())
}

/// # Safety
/// `g` must be a live graph handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn pn_graph_num_edges(g: *const PnGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.num_edges())
}

/// Number of edges on the longest input-output path.
///
/// # Safety
/// `g` must be a live graph handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn pn_graph_depth(g: *const PnGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.depth())
}

/// Endpoints of edge `edge`.
///
/// # Safety
/// `g` must be a live graph handle; `src` and `dst` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pn_graph_edge(g: *const PnGraph, edge: usize, src: *mut usize, dst: *mut usize) -> PnStatus {
    guard(|| {
        let g = graph_ref(g)?;
        if src.is_null() || dst.is_null() {
            return Err(null("src/dst"));
        }
        if edge >= g.graph.num_edges() {
            return Err(Failure(
                PnStatus::Input,
                format!("edge {edge} out of range for {} edges", g.graph.num_edges()),
            ));
        }
        let e = g.graph.edge(edge);
        *src = e.src;
        *dst = e.dst;
        Ok(())
    })
}

/// Fills `w` with the balanced Gaussian initialization for `seed`.
///
/// # Safety
/// `w` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pn_init_balanced(g: *const PnGraph, seed: u64, w: *mut f64, len: usize) -> PnStatus {
    guard(|| {
        let g = graph_ref(g)?;
        check_len(len, g.graph.num_edges(), "weights")?;
        slice_out(w, len, "weights")?.copy_from_slice(&init_balanced(&g.graph, seed));
        Ok(())
    })
}

/// Applies `k` random unit rescalings (standard log-normal factors times
/// ten) to `w` in place.
///
/// # Safety
/// `w` must be valid for `len` reads and writes.
#[no_mangle]
pub unsafe extern "C" fn pn_unbalance(g: *const PnGraph, w: *mut f64, len: usize, k: usize, seed: u64) -> PnStatus {
    guard(|| {
        let g = graph_ref(g)?;
        let current = weights_of(g, w, len)?;
        let out = unbalance(&g.graph, &current, k, seed, LogNormalParams::default())?;
        slice_out(w, len, "weights")?.copy_from_slice(&out);
        Ok(())
    })
}

/// Multiplies the edges into hidden unit `node` by `c` and divides the
/// edges out of it by `c`.
///
/// # Safety
/// `w` must be valid for `len` reads and writes.
#[no_mangle]
pub unsafe extern "C" fn pn_apply_rescaling(g: *const PnGraph, w: *mut f64, len: usize, node: usize, c: f64) -> PnStatus {
    guard(|| {
        let g = graph_ref(g)?;
        let mut current = weights_of(g, w, len)?;
        rescale_in_place(&g.graph, &mut current, RescalingOp::new(node, c)?)?;
        slice_out(w, len, "weights")?.copy_from_slice(&current);
        Ok(())
    })
}

/// ℓp path norm.
///
/// # Safety
/// `w` must be valid for `len` reads; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pn_path_norm(g: *const PnGraph, w: *const f64, len: usize, p: f64, out: *mut f64) -> PnStatus {
    guard(|| {
        let g = graph_ref(g)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = path_norm_dp(&g.graph, &weights_of(g, w, len)?, p)?;
        Ok(())
    })
}

/// Group norm μ_{p,q}; pass `q = INFINITY` for the per-unit maximum.
///
/// # Safety
/// `w` must be valid for `len` reads; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pn_group_norm(
    g: *const PnGraph,
    w: *const f64,
    len: usize,
    p: f64,
    q: f64,
    out: *mut f64,
) -> PnStatus {
    guard(|| {
        let g = graph_ref(g)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = group_norm(&g.graph, &weights_of(g, w, len)?, GroupNormParams::new(p, q)?)?;
        Ok(())
    })
}

/// Per-edge Path-SGD scaling γ written to `gamma`.
///
/// # Safety
/// `w` and `gamma` must be valid for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn pn_compute_gamma(
    g: *const PnGraph,
    w: *const f64,
    len: usize,
    p: f64,
    gamma: *mut f64,
) -> PnStatus {
    guard(|| {
        let g = graph_ref(g)?;
        let scalars = compute_gamma(&g.graph, &g.levels, &weights_of(g, w, len)?, p)?;
        slice_out(gamma, len, "gamma")?.copy_from_slice(&scalars.gamma_edge);
        Ok(())
    })
}

/// Output scores for one input row.
///
/// # Safety
/// `w` valid for `len`, `x` for `x_len`, `scores` for `scores_len`
/// elements.
#[no_mangle]
pub unsafe extern "C" fn pn_forward(
    g: *const PnGraph,
    w: *const f64,
    len: usize,
    x: *const f64,
    x_len: usize,
    scores: *mut f64,
    scores_len: usize,
) -> PnStatus {
    guard(|| {
        let g = graph_ref(g)?;
        check_len(scores_len, g.graph.outputs().len(), "scores")?;
        let out = forward(&g.graph, &weights_of(g, w, len)?, slice_in(x, x_len, "x")?)?;
        slice_out(scores, scores_len, "scores")?.copy_from_slice(&out);
        Ok(())
    })
}

/// Mean softmax cross-entropy of a batch of `rows x dim` inputs and its
/// gradient.
///
/// # Safety
/// `inputs` valid for `rows * dim`, `labels` for `rows`, `w` and `grad`
/// for `len` elements; `loss` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pn_loss_and_grad(
    g: *const PnGraph,
    w: *const f64,
    len: usize,
    inputs: *const f64,
    labels: *const usize,
    rows: usize,
    dim: usize,
    loss: *mut f64,
    grad: *mut f64,
) -> PnStatus {
    guard(|| {
        let g = graph_ref(g)?;
        if loss.is_null() {
            return Err(null("loss"));
        }
        let weights = weights_of(g, w, len)?;
        let batch = Batch::new(
            slice_in(inputs, rows * dim, "inputs")?.to_vec(),
            slice_in(labels, rows, "labels")?.to_vec(),
            dim,
        )?;
        let (report, gr) = loss_and_grad(&g.graph, &weights, &batch)?;
        slice_out(grad, len, "grad")?.copy_from_slice(&gr);
        *loss = report.loss;
        Ok(())
    })
}

/// Optimizer for a graph with `num_edges` edges; `p` is used by Path-SGD
/// only.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pn_optimizer_new(
    kind: PnOptimizerKind,
    step_size: f64,
    p: f64,
    num_edges: usize,
    out: *mut *mut PnOptimizer,
) -> PnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = match kind {
            PnOptimizerKind::Sgd => OptimizerKind::Sgd,
            PnOptimizerKind::AdaGrad => OptimizerKind::AdaGrad,
            PnOptimizerKind::PathSgd => OptimizerKind::PathSgd,
        };
        let state = OptimizerState::new(kind, step_size, num_edges)?.with_p(p)?;
        *out = Box::into_raw(Box::new(PnOptimizer { state }));
        Ok(())
    })
}

/// One update of `w` in place from `grad`.
///
/// # Safety
/// `opt` and `g` must be live handles; `w` and `grad` valid for `len`
/// elements.
#[no_mangle]
pub unsafe extern "C" fn pn_optimizer_step(
    opt: *mut PnOptimizer,
    g: *const PnGraph,
    w: *mut f64,
    grad: *const f64,
    len: usize,
) -> PnStatus {
    guard(|| {
        let opt = opt.as_mut().ok_or_else(|| null("optimizer"))?;
        let g = graph_ref(g)?;
        let mut weights = weights_of(g, w, len)?;
        let grad = slice_in(grad, len, "grad")?;
        opt.state.step(&g.graph, &g.levels, &mut weights, grad)?;
        slice_out(w, len, "weights")?.copy_from_slice(&weights);
        Ok(())
    })
}

/// Path-SGD edges clamped at the γ floor so far.
///
/// # Safety
/// `opt` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn pn_optimizer_clamped_edges(opt: *const PnOptimizer) -> u64 {
    opt.as_ref().map_or(0, |o| o.state.clamped_edges)
}

/// Releases an optimizer. Null is ignored.
///
/// # Safety
/// `opt` must come from [`pn_optimizer_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pn_optimizer_free(opt: *mut PnOptimizer) {
    if !opt.is_null() {
        drop(Box::from_raw(opt));
    }
}
