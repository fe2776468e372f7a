//! SGD, AdaGrad and Path-SGD behind one step interface.
//!
//! Path-SGD divides each coordinate of the gradient by
//! `γ_p(w, e) = (Σ over paths through e of Π_{e' ≠ e} |w_e'|^p)^{2/p}`.
//! For an edge `u → v` this factorizes as `γ_in(u)^{2/p} γ_out(v)^{2/p}`,
//! where `γ_in(u)` sums `|w|^p` path products from the inputs to `u` and
//! `γ_out(v)` from `v` to the outputs, so one forward and one backward sweep
//! over the graph give every γ.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};
use crate::graph::{LevelSets, NetworkGraph, WeightVector};
use crate::pathnorms::pow_abs;

/// Per-node and per-edge path scalars at one weight snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PathScalars {
    pub gamma_in: Vec<f64>,
    pub gamma_out: Vec<f64>,
    pub gamma_edge: Vec<f64>,
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Config(format!("p must be finite and >= 1, got {p}")));
    }
    Ok(())
}

pub fn compute_gamma(g: &NetworkGraph, levels: &LevelSets, w: &WeightVector, p: f64) -> Result<PathScalars> {
    g.check_weights(w)?;
    check_p(p)?;
    let mut gamma_in = Vec::new();
    let mut gamma_out = Vec::new();
    node_sums(g, levels, w, p, &mut gamma_in, &mut gamma_out)?;
    let in_pow: Vec<f64> = gamma_in.iter().map(|&x| raise_to_two_over_p(x, p)).collect();
    let out_pow: Vec<f64> = gamma_out.iter().map(|&x| raise_to_two_over_p(x, p)).collect();
    let gamma_edge: Vec<f64> = g.edges().iter().map(|e| in_pow[e.src] * out_pow[e.dst]).collect();
    if let Some(e) = gamma_edge.iter().position(|x| !x.is_finite()) {
        return Err(Error::numeric(Location::Edge(e), "γ is not finite"));
    }
    Ok(PathScalars {
        gamma_in,
        gamma_out,
        gamma_edge,
    })
}

fn raise_to_two_over_p(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x
    } else {
        x.powf(2.0 / p)
    }
}

/// Writes `γ_in` and `γ_out` (before the `2/p` power) into the buffers.
fn node_sums(
    g: &NetworkGraph,
    levels: &LevelSets,
    w: &[f64],
    p: f64,
    gamma_in: &mut Vec<f64>,
    gamma_out: &mut Vec<f64>,
) -> Result<()> {
    let n = g.num_nodes();
    gamma_in.clear();
    gamma_in.resize(n, 0.0);
    gamma_out.clear();
    gamma_out.resize(n, 0.0);
    if let Some(sizes) = g.layer_sizes() {
        return node_sums_dense(&DenseLayout::new(sizes), w, p, gamma_in, gamma_out);
    }
    for &v in levels.v_in(0) {
        gamma_in[v] = 1.0;
    }
    for &v in levels.v_out(0) {
        gamma_out[v] = 1.0;
    }
    for i in 1..=levels.depth() {
        for &v in levels.v_in(i) {
            let mut acc = 0.0;
            for &e in g.in_edges(v) {
                acc += gamma_in[g.edge(e).src] * pow_abs(w[e].abs(), p);
            }
            if !acc.is_finite() {
                return Err(Error::numeric(Location::Node(v), "γ_in is not finite"));
            }
            gamma_in[v] = acc;
        }
        for &v in levels.v_out(i) {
            let mut acc = 0.0;
            for &e in g.out_edges(v) {
                acc += pow_abs(w[e].abs(), p) * gamma_out[g.edge(e).dst];
            }
            if !acc.is_finite() {
                return Err(Error::numeric(Location::Node(v), "γ_out is not finite"));
            }
            gamma_out[v] = acc;
        }
    }
    Ok(())
}

/// Node and edge offsets of a fully connected layered network whose
/// `n_l x n_{l+1}` weight blocks are stored row-major, layer after layer.
struct DenseLayout<'a> {
    sizes: &'a [usize],
    node_off: Vec<usize>,
    edge_off: Vec<usize>,
}

impl<'a> DenseLayout<'a> {
    fn new(sizes: &'a [usize]) -> Self {
        let mut node_off = Vec::with_capacity(sizes.len());
        let mut edge_off = Vec::with_capacity(sizes.len());
        let (mut no, mut eo) = (0, 0);
        for (l, &s) in sizes.iter().enumerate() {
            node_off.push(no);
            edge_off.push(eo);
            no += s;
            if l + 1 < sizes.len() {
                eo += s * sizes[l + 1];
            }
        }
        DenseLayout {
            sizes,
            node_off,
            edge_off,
        }
    }

    fn block(&self, l: usize) -> std::ops::Range<usize> {
        self.edge_off[l]..self.edge_off[l] + self.sizes[l] * self.sizes[l + 1]
    }

    fn nodes(&self, l: usize) -> std::ops::Range<usize> {
        self.node_off[l]..self.node_off[l] + self.sizes[l]
    }
}

/// Same sums as the level sweep, in the same order, over contiguous blocks.
fn node_sums_dense(layout: &DenseLayout<'_>, w: &[f64], p: f64, gamma_in: &mut [f64], gamma_out: &mut [f64]) -> Result<()> {
    let sizes = layout.sizes;
    let last = sizes.len() - 1;
    let check = |vals: &[f64], first: usize, what: &str| -> Result<()> {
        match vals.iter().position(|x| !x.is_finite()) {
            Some(i) => Err(Error::numeric(Location::Node(first + i), format!("{what} is not finite"))),
            None => Ok(()),
        }
    };

    gamma_in[layout.nodes(0)].fill(1.0);
    for l in 0..last {
        let cols = sizes[l + 1];
        let (head, tail) = gamma_in.split_at_mut(layout.node_off[l + 1]);
        let src = &head[layout.node_off[l]..];
        let dst = &mut tail[..cols];
        for (i, row) in w[layout.block(l)].chunks_exact(cols).enumerate() {
            let gi = src[i];
            for (acc, &x) in dst.iter_mut().zip(row) {
                *acc += gi * pow_abs(x.abs(), p);
            }
        }
        check(dst, layout.node_off[l + 1], "γ_in")?;
    }

    gamma_out[layout.nodes(last)].fill(1.0);
    for l in (0..last).rev() {
        let (rows, cols) = (sizes[l], sizes[l + 1]);
        let (head, tail) = gamma_out.split_at_mut(layout.node_off[l + 1]);
        let dst = &tail[..cols];
        let src = &mut head[layout.node_off[l]..];
        for (i, row) in w[layout.block(l)].chunks_exact(cols).enumerate() {
            let mut acc = 0.0;
            for (&x, &go) in row.iter().zip(dst) {
                acc += pow_abs(x.abs(), p) * go;
            }
            src[i] = acc;
        }
        check(&src[..rows], layout.node_off[l], "γ_out")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[serde(rename = "adagrad")]
    AdaGrad,
    #[serde(rename = "pathsgd")]
    PathSgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::AdaGrad => "adagrad",
            OptimizerKind::PathSgd => "pathsgd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::AdaGrad),
            "pathsgd" | "path-sgd" => Ok(OptimizerKind::PathSgd),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Added to AdaGrad's accumulator before the square root.
pub const ADAGRAD_EPSILON: f64 = 1e-8;

/// Smallest Path-SGD divisor: only exact zeros and subnormal γ are clamped.
pub const GAMMA_FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step_size: f64,
    /// Path-norm exponent (Path-SGD only).
    pub p: f64,
    pub epsilon: f64,
    /// Running sum of squared gradients (AdaGrad only).
    pub adagrad_accum: Vec<f64>,
    /// Path-SGD edges whose γ fell below `epsilon`, summed over steps.
    pub clamped_edges: u64,
    pub steps: u64,
    scratch_in: Vec<f64>,
    scratch_out: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, step_size: f64, num_edges: usize) -> Result<Self> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {step_size}")));
        }
        Ok(OptimizerState {
            kind,
            step_size,
            p: 2.0,
            epsilon: match kind {
                OptimizerKind::PathSgd => GAMMA_FLOOR,
                _ => ADAGRAD_EPSILON,
            },
            adagrad_accum: if kind == OptimizerKind::AdaGrad {
                vec![0.0; num_edges]
            } else {
                Vec::new()
            },
            clamped_edges: 0,
            steps: 0,
            scratch_in: Vec::new(),
            scratch_out: Vec::new(),
        })
    }

    pub fn with_p(mut self, p: f64) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::Config(format!("p must be finite and >= 1, got {p}")));
        }
        self.p = p;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Applies one update in place, dispatching on `kind`.
    pub fn step(&mut self, g: &NetworkGraph, levels: &LevelSets, w: &mut WeightVector, grad: &[f64]) -> Result<()> {
        if grad.len() != w.len() {
            return Err(Error::Input(format!(
                "gradient has {} entries, weights have {}",
                grad.len(),
                w.len()
            )));
        }
        match self.kind {
            OptimizerKind::Sgd => sgd_step(self, w, grad),
            OptimizerKind::AdaGrad => adagrad_step(self, w, grad),
            OptimizerKind::PathSgd => self.fused_pathsgd_step(g, levels, w, grad)?,
        }
        self.steps += 1;
        Ok(())
    }
}

impl OptimizerState {
    /// [`compute_gamma`] followed by [`pathsgd_step`] without materializing
    /// the per-edge γ vector. Produces bit-identical weights.
    fn fused_pathsgd_step(&mut self, g: &NetworkGraph, levels: &LevelSets, w: &mut [f64], grad: &[f64]) -> Result<()> {
        check_p(self.p)?;
        if w.len() != g.num_edges() {
            return Err(Error::Input(format!("{} weights for {} edges", w.len(), g.num_edges())));
        }
        let p = self.p;
        let mut gin = std::mem::take(&mut self.scratch_in);
        let mut gout = std::mem::take(&mut self.scratch_out);
        let sums = node_sums(g, levels, w, p, &mut gin, &mut gout);
        let result = sums.and_then(|()| {
            gin.iter_mut().for_each(|x| *x = raise_to_two_over_p(*x, p));
            gout.iter_mut().for_each(|x| *x = raise_to_two_over_p(*x, p));
            let max_in = gin.iter().fold(0.0f64, |m, &x| m.max(x));
            let max_out = gout.iter().fold(0.0f64, |m, &x| m.max(x));
            if !(max_in * max_out).is_finite() {
                let e = g
                    .edges()
                    .iter()
                    .position(|e| !(gin[e.src] * gout[e.dst]).is_finite())
                    .unwrap_or(0);
                return Err(Error::numeric(Location::Edge(e), "γ is not finite"));
            }
            let eta = self.step_size;
            let eps = self.epsilon;
            let mut clamped = 0u64;
            let mut update = |x: &mut f64, gr: f64, gm: f64| {
                let divisor = if gm < eps {
                    clamped += 1;
                    eps
                } else {
                    gm
                };
                *x -= eta * gr / divisor;
            };
            if let Some(sizes) = g.layer_sizes() {
                let layout = DenseLayout::new(sizes);
                for l in 0..sizes.len() - 1 {
                    let cols = sizes[l + 1];
                    let out = &gout[layout.nodes(l + 1)];
                    let range = layout.block(l);
                    let rows = w[range.clone()].chunks_exact_mut(cols).zip(grad[range].chunks_exact(cols));
                    for ((wr, gr), &a) in rows.zip(&gin[layout.nodes(l)]) {
                        for ((x, &gv), &b) in wr.iter_mut().zip(gr).zip(out) {
                            update(x, gv, a * b);
                        }
                    }
                }
            } else {
                for ((x, &gv), e) in w.iter_mut().zip(grad).zip(g.edges()) {
                    update(x, gv, gin[e.src] * gout[e.dst]);
                }
            }
            self.clamped_edges += clamped;
            Ok(())
        });
        self.scratch_in = gin;
        self.scratch_out = gout;
        result
    }
}

/// `w ← w − η ∇L`.
pub fn sgd_step(state: &OptimizerState, w: &mut [f64], grad: &[f64]) {
    let eta = state.step_size;
    for (x, g) in w.iter_mut().zip(grad) {
        *x -= eta * g;
    }
}

/// `a ← a + g²; w ← w − η g / √(a + ε)`.
pub fn adagrad_step(state: &mut OptimizerState, w: &mut [f64], grad: &[f64]) {
    if state.adagrad_accum.len() != w.len() {
        state.adagrad_accum = vec![0.0; w.len()];
    }
    let eta = state.step_size;
    let eps = state.epsilon;
    for ((x, g), a) in w.iter_mut().zip(grad).zip(state.adagrad_accum.iter_mut()) {
        *a += g * g;
        let denom = (*a + eps).sqrt();
        if denom > 0.0 {
            *x -= eta * g / denom;
        }
    }
}

/// `w_e ← w_e − η ∂L/∂w_e / max(γ_e, ε)`, every edge from the same γ
/// snapshot.
pub fn pathsgd_step(state: &mut OptimizerState, gamma: &PathScalars, w: &mut [f64], grad: &[f64]) -> Result<()> {
    if gamma.gamma_edge.len() != w.len() {
        return Err(Error::Input("γ does not match the weight vector".into()));
    }
    let eta = state.step_size;
    let eps = state.epsilon;
    let mut clamped = 0;
    for (e, ((x, g), &gm)) in w.iter_mut().zip(grad).zip(&gamma.gamma_edge).enumerate() {
        if !gm.is_finite() {
            return Err(Error::numeric(Location::Edge(e), "γ is not finite"));
        }
        let divisor = if gm < eps {
            clamped += 1;
            eps
        } else {
            gm
        };
        *x -= eta * g / divisor;
    }
    state.clamped_edges += clamped;
    Ok(())
}
