//! The rescaling symmetry of RELU networks.
//!
//! Multiplying every edge into a hidden unit by `c > 0` and dividing every
//! edge out of it by `c` leaves the computed function unchanged. Weight
//! vectors related by a sequence of such operations are rescaling
//! equivalent; they share the same path vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{count_paths, NetworkGraph, NodeId, NodeKind, WeightVector};
use crate::netfwd::Batch;
use crate::pathnorms::{max_norm, path_vector_bruteforce};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescalingOp {
    node: NodeId,
    c: f64,
}

impl RescalingOp {
    pub fn new(node: NodeId, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("rescaling factor must be positive and finite, got {c}")));
        }
        Ok(RescalingOp { node, c })
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn factor(&self) -> f64 {
        self.c
    }

    pub fn inverse(&self) -> Self {
        RescalingOp {
            node: self.node,
            c: 1.0 / self.c,
        }
    }

    fn validate(&self, g: &NetworkGraph) -> Result<()> {
        if self.node >= g.num_nodes() {
            return Err(Error::Input(format!("rescaling targets unknown node {}", self.node)));
        }
        match g.kind(self.node) {
            NodeKind::Hidden => Ok(()),
            kind => Err(Error::Input(format!(
                "rescaling must target a hidden unit, node {} is {kind:?}",
                self.node
            ))),
        }
    }
}

/// Applies the rescaling in place.
pub fn rescale_in_place(g: &NetworkGraph, w: &mut WeightVector, op: RescalingOp) -> Result<()> {
    g.check_weights(w)?;
    op.validate(g)?;
    for &e in g.in_edges(op.node) {
        w[e] *= op.c;
    }
    for &e in g.out_edges(op.node) {
        w[e] /= op.c;
    }
    Ok(())
}

pub fn apply_rescaling(g: &NetworkGraph, w: &WeightVector, op: RescalingOp) -> Result<WeightVector> {
    let mut out = w.clone();
    rescale_in_place(g, &mut out, op)?;
    Ok(out)
}

/// An ordered sequence of rescalings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RescalingPlan {
    pub ops: Vec<RescalingOp>,
}

impl RescalingPlan {
    pub fn new(ops: Vec<RescalingOp>) -> Self {
        RescalingPlan { ops }
    }

    /// `n_ops` rescalings of uniformly chosen hidden units with factors
    /// log-uniform in `[c_min, c_max]`.
    pub fn random(g: &NetworkGraph, n_ops: usize, c_min: f64, c_max: f64, rng: &mut impl Rng) -> Result<Self> {
        let hidden: Vec<NodeId> = g.hidden_nodes().collect();
        if hidden.is_empty() {
            return Err(Error::Input("graph has no hidden units to rescale".into()));
        }
        if !(c_min > 0.0 && c_max >= c_min) {
            return Err(Error::Config(format!("bad factor range [{c_min}, {c_max}]")));
        }
        let (lo, hi) = (c_min.ln(), c_max.ln());
        let ops = (0..n_ops)
            .map(|_| {
                let v = hidden[rng.random_range(0..hidden.len())];
                let c = if hi > lo { rng.random_range(lo..hi).exp() } else { c_min };
                RescalingOp::new(v, c)
            })
            .collect::<Result<_>>()?;
        Ok(RescalingPlan { ops })
    }

    pub fn apply(&self, g: &NetworkGraph, w: &WeightVector) -> Result<WeightVector> {
        let mut out = w.clone();
        for &op in &self.ops {
            rescale_in_place(g, &mut out, op)?;
        }
        Ok(out)
    }

    /// Undoes the plan: inverse factors in reverse order.
    pub fn inverse(&self) -> Self {
        RescalingPlan {
            ops: self.ops.iter().rev().map(RescalingOp::inverse).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivalenceMethod {
    /// Explicit path-vector enumeration.
    PathEnumeration,
    /// Per-edge sums of path products through each edge, computed by DP.
    EdgeAggregates,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    pub equivalent: bool,
    /// `max |a - b| / (1 + max |a|)` over the compared quantities.
    pub max_deviation: f64,
    pub method: EquivalenceMethod,
}

/// Graphs with at most this many paths are compared by enumeration.
pub const ENUMERATION_LIMIT: u128 = 100_000;

/// Compares path vectors, a necessary condition for rescaling equivalence.
///
/// Equivalent weights always pass. The converse can fail: weights that
/// differ only where some path product vanishes, or by sign flips along a
/// path, produce equal path vectors without being reachable by positive
/// rescalings.
pub fn check_rescaling_equivalent(
    g: &NetworkGraph,
    w1: &WeightVector,
    w2: &WeightVector,
    tol: f64,
) -> Result<EquivalenceReport> {
    g.check_weights(w1)?;
    g.check_weights(w2)?;
    let (max_deviation, method) = if count_paths(g) <= ENUMERATION_LIMIT {
        let a = path_vector_bruteforce(g, w1)?;
        let b = path_vector_bruteforce(g, w2)?;
        (relative_max_deviation(a.entries(), b.entries()), EquivalenceMethod::PathEnumeration)
    } else {
        let dev = [1.0, 2.0]
            .iter()
            .map(|&p| {
                let a = edge_path_sums(g, w1, p);
                let b = edge_path_sums(g, w2, p);
                relative_max_deviation(&a, &b)
            })
            .fold(0.0, f64::max);
        (dev, EquivalenceMethod::EdgeAggregates)
    };
    Ok(EquivalenceReport {
        equivalent: max_deviation <= tol,
        max_deviation,
        method,
    })
}

/// `‖π(w1) − π(w2)‖∞ / (1 + ‖π(w1)‖∞)` by enumeration.
pub fn path_deviation(g: &NetworkGraph, w1: &WeightVector, w2: &WeightVector) -> Result<f64> {
    let a = path_vector_bruteforce(g, w1)?;
    let b = path_vector_bruteforce(g, w2)?;
    Ok(relative_max_deviation(a.entries(), b.entries()))
}

fn relative_max_deviation(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let dev = a.iter().zip(b).fold(0.0f64, |m, (x, y)| {
        let d = (x - y).abs();
        if d.is_nan() {
            f64::INFINITY
        } else {
            m.max(d)
        }
    });
    dev / (1.0 + scale)
}

/// For every edge `u -> v`, the sum over input-to-output paths through it of
/// the path product: signed for `p == 1`, of `|w|^p` terms otherwise. Both
/// are rescaling invariant.
fn edge_path_sums(g: &NetworkGraph, w: &WeightVector, p: f64) -> Vec<f64> {
    let term = |x: f64| if p == 1.0 { x } else { x.abs().powf(p) };
    let n = g.num_nodes();
    let mut fwd = vec![0.0; n];
    for &v in g.inputs() {
        fwd[v] = 1.0;
    }
    for &v in g.topological_order() {
        for &e in g.in_edges(v) {
            fwd[v] += fwd[g.edge(e).src] * term(w[e]);
        }
    }
    let mut bwd = vec![0.0; n];
    for &v in g.outputs() {
        bwd[v] = 1.0;
    }
    for &v in g.topological_order().iter().rev() {
        for &e in g.out_edges(v) {
            bwd[v] += term(w[e]) * bwd[g.edge(e).dst];
        }
    }
    g.edges()
        .iter()
        .enumerate()
        .map(|(id, e)| fwd[e.src] * term(w[id]) * bwd[e.dst])
        .collect()
}

/// Parameters of the log-normal factor distribution used by [`unbalance`]:
/// `ln c ~ N(mu, sigma²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for LogNormalParams {
    fn default() -> Self {
        LogNormalParams { mu: 0.0, sigma: 1.0 }
    }
}

/// Draws `k` hidden units uniformly with replacement and, for each, a factor
/// `c` from the log-normal; the op rescales that unit by `10 c`.
pub fn unbalance_plan(g: &NetworkGraph, k: usize, seed: u64, params: LogNormalParams) -> Result<RescalingPlan> {
    let hidden: Vec<NodeId> = g.hidden_nodes().collect();
    if hidden.is_empty() {
        return Err(Error::Input("cannot unbalance a network without hidden units".into()));
    }
    let dist = LogNormal::new(params.mu, params.sigma)
        .map_err(|e| Error::Config(format!("log-normal parameters: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = (0..k)
        .map(|_| {
            let v = hidden[rng.random_range(0..hidden.len())];
            let c = dist.sample(&mut rng);
            RescalingOp::new(v, 10.0 * c)
        })
        .collect::<Result<_>>()?;
    Ok(RescalingPlan { ops })
}

pub fn unbalance(
    g: &NetworkGraph,
    w: &WeightVector,
    k: usize,
    seed: u64,
    params: LogNormalParams,
) -> Result<WeightVector> {
    unbalance_plan(g, k, seed, params)?.apply(g, w)
}

/// Result of [`balance_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub struct Balanced {
    pub weights: WeightVector,
    /// `μ_{p,∞}(weights)^depth`.
    pub value: f64,
    /// Per-node natural-log scale applied (zero for inputs and outputs).
    pub log_scales: Vec<f64>,
    pub sweeps: usize,
}

pub const BALANCE_MAX_SWEEPS: usize = 100_000;
const BALANCE_TOL: f64 = 1e-12;

/// Numerically minimizes the per-unit max norm `μ_{p,∞}` over rescalings of
/// `w` and reports `μ_{p,∞}^depth` at the minimizer.
///
/// Works in log-scale space, one variable per hidden unit. A coordinate step
/// at unit `h` moves its scale to the exact minimizer of the largest norm
/// among `h` and its children, i.e. the crossing point of `h`'s increasing
/// incoming norm and its children's decreasing ones. Sweeps run in
/// topological order until no scale moves by more than 1e-12.
///
/// Every hidden unit needs a nonzero incoming and a nonzero outgoing weight.
pub fn balance_oracle(g: &NetworkGraph, w: &WeightVector, p: f64) -> Result<Balanced> {
    g.check_weights(w)?;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Config(format!("p must be finite and >= 1, got {p}")));
    }
    for v in g.hidden_nodes() {
        let nonzero = |edges: &[usize]| edges.iter().any(|&e| w[e] != 0.0);
        if !nonzero(g.in_edges(v)) || !nonzero(g.out_edges(v)) {
            return Err(Error::Input(format!(
                "hidden unit {v} has only zero incoming or outgoing weights"
            )));
        }
    }
    let hidden: Vec<NodeId> = g.hidden_nodes().collect();
    let mut s = vec![0.0f64; g.num_nodes()];
    // ln |w_e|^p, fixed; the scaled term is ln|w_e|^p + p (s_dst - s_src).
    let log_abs: Vec<f64> = w.iter().map(|x| p * x.abs().ln()).collect();
    let scaled = |s: &[f64], e: usize| {
        let edge = g.edge(e);
        log_abs[e] + p * (s[edge.dst] - s[edge.src])
    };
    // ln Σ |w̃_e|^p over `edges`, optionally skipping one edge.
    let log_sum = |s: &[f64], edges: &[usize], skip: Option<usize>| {
        let terms: Vec<f64> = edges
            .iter()
            .filter(|&&e| Some(e) != skip)
            .map(|&e| scaled(s, e))
            .collect();
        log_sum_exp(&terms)
    };

    let mut sweeps = 0;
    loop {
        if sweeps >= BALANCE_MAX_SWEEPS {
            let residual = hidden
                .iter()
                .map(|&h| local_step(g, &s, h, p, &log_sum, &scaled).abs())
                .fold(0.0, f64::max);
            return Err(Error::NoConvergence { sweeps, residual });
        }
        sweeps += 1;
        let mut largest = 0.0f64;
        for &h in &hidden {
            let t = local_step(g, &s, h, p, &log_sum, &scaled);
            s[h] += t;
            largest = largest.max(t.abs());
        }
        if largest < BALANCE_TOL {
            break;
        }
    }

    let weights: WeightVector = g
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| w[e] * (s[edge.dst] - s[edge.src]).exp())
        .collect::<Vec<_>>()
        .into();
    let value = max_norm(g, &weights, p)?.powi(g.depth() as i32);
    Ok(Balanced {
        weights,
        value,
        log_scales: s,
        sweeps,
    })
}

/// Log-scale shift for unit `h` that equalizes its incoming norm with the
/// largest child norm.
fn local_step(
    g: &NetworkGraph,
    s: &[f64],
    h: NodeId,
    p: f64,
    log_sum: &impl Fn(&[f64], &[usize], Option<usize>) -> f64,
    scaled: &impl Fn(&[f64], usize) -> f64,
) -> f64 {
    // ln of h's incoming norm^p at shift 0.
    let own = log_sum(s, g.in_edges(h), None);
    // For each child: (ln K, ln M) with child norm^p = K + M e^{-p t}.
    let children: Vec<(f64, f64)> = g
        .out_edges(h)
        .iter()
        .map(|&e| {
            let c = g.edge(e).dst;
            (log_sum(s, g.in_edges(c), Some(e)), scaled(s, e))
        })
        .collect();
    // f(t) = (own + p t) - max_c ln(K + M e^{-p t}); increasing in t.
    let f = |t: f64| {
        let child = children
            .iter()
            .map(|&(k, m)| log_add_exp(k, m - p * t))
            .fold(f64::NEG_INFINITY, f64::max);
        own + p * t - child
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while f(lo) > 0.0 {
        lo *= 2.0;
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// A two-hidden-unit network with one unit rescaled by 10, used as the
/// standing example of an unbalanced network.
#[derive(Debug, Clone)]
pub struct UnbalancedToy {
    pub graph: NetworkGraph,
    pub weights: WeightVector,
    pub plan: RescalingPlan,
    pub batch: Batch,
}

impl UnbalancedToy {
    /// Layered 2-2-2 net; edges in id order are
    /// `i1→h1, i1→h2, i2→h1, i2→h2, h1→o1, h1→o2, h2→o1, h2→o2`.
    pub fn standard() -> Self {
        let graph = NetworkGraph::layered(&[2, 2, 2]).expect("static shape");
        let weights = WeightVector::new(vec![1.0, 0.5, 0.5, 1.0, 1.0, -1.0, 0.5, 1.0]);
        let plan = RescalingPlan::new(vec![RescalingOp::new(2, 10.0).expect("positive")]);
        let batch = Batch::new(vec![1.0, 1.0], vec![0], 2).expect("static batch");
        UnbalancedToy {
            graph,
            weights,
            plan,
            batch,
        }
    }

    pub fn unbalanced_weights(&self) -> WeightVector {
        self.plan.apply(&self.graph, &self.weights).expect("valid plan")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathnorms::path_norm_dp;

    fn diamond(w: [f64; 4]) -> (NetworkGraph, WeightVector) {
        (NetworkGraph::layered(&[1, 2, 1]).unwrap(), WeightVector::new(w.to_vec()))
    }

    #[test]
    fn rescale_diamond_by_hand() {
        let (g, w) = diamond([1.0, 2.0, 3.0, 4.0]);
        let out = apply_rescaling(&g, &w, RescalingOp::new(1, 2.0).unwrap()).unwrap();
        assert_eq!(&*out, &[2.0, 2.0, 1.5, 4.0]);
        let same = apply_rescaling(&g, &w, RescalingOp::new(2, 1.0).unwrap()).unwrap();
        assert_eq!(same, w);
        assert_eq!(
            path_vector_bruteforce(&g, &out).unwrap(),
            path_vector_bruteforce(&g, &w).unwrap()
        );
    }

    #[test]
    fn rejects_bad_ops() {
        let (g, w) = diamond([1.0, 2.0, 3.0, 4.0]);
        assert!(RescalingOp::new(1, 0.0).is_err());
        assert!(RescalingOp::new(1, -2.0).is_err());
        assert!(RescalingOp::new(1, f64::NAN).is_err());
        for node in [0, 3, 9] {
            let op = RescalingOp::new(node, 2.0).unwrap();
            assert!(matches!(apply_rescaling(&g, &w, op), Err(Error::Input(_))));
        }
    }

    #[test]
    fn equivalence_examples() {
        let g = NetworkGraph::layered(&[2, 3, 2]).unwrap();
        let w = WeightVector::new((0..12).map(|i| 0.3 + 0.1 * i as f64).collect());
        let r = apply_rescaling(&g, &w, RescalingOp::new(3, 7.5).unwrap()).unwrap();
        let rep = check_rescaling_equivalent(&g, &w, &r, 1e-10).unwrap();
        assert!(rep.equivalent, "{rep:?}");
        assert_eq!(rep.method, EquivalenceMethod::PathEnumeration);

        let doubled = WeightVector::new(w.iter().map(|x| 2.0 * x).collect());
        assert!(!check_rescaling_equivalent(&g, &w, &doubled, 1e-10).unwrap().equivalent);

        let mut bumped = w.clone();
        bumped[5] += 1e-2;
        assert!(!check_rescaling_equivalent(&g, &w, &bumped, 1e-6).unwrap().equivalent);
    }

    #[test]
    fn aggregate_method_on_large_graphs() {
        let g = NetworkGraph::layered(&[50, 50, 50, 2]).unwrap();
        assert!(count_paths(&g) > ENUMERATION_LIMIT);
        let w = crate::init::init_balanced(&g, 5);
        let u = unbalance(&g, &w, 40, 1, LogNormalParams::default()).unwrap();
        let rep = check_rescaling_equivalent(&g, &w, &u, 1e-8).unwrap();
        assert_eq!(rep.method, EquivalenceMethod::EdgeAggregates);
        assert!(rep.equivalent, "{rep:?}");
        let mut bumped = w.clone();
        bumped[17] *= 1.01;
        assert!(!check_rescaling_equivalent(&g, &w, &bumped, 1e-8).unwrap().equivalent);
    }

    #[test]
    fn plan_inverse_restores() {
        let g = NetworkGraph::layered(&[3, 4, 4, 2]).unwrap();
        let w = crate::init::init_balanced(&g, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = RescalingPlan::random(&g, 25, 1e-3, 1e3, &mut rng).unwrap();
        let back = plan.inverse().apply(&g, &plan.apply(&g, &w).unwrap()).unwrap();
        for (a, b) in w.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn unbalance_basics() {
        let g = NetworkGraph::layered(&[4, 6, 6, 3]).unwrap();
        let w = crate::init::init_balanced(&g, 8);
        let u = unbalance(&g, &w, 6, 2, LogNormalParams::default()).unwrap();
        assert!(check_rescaling_equivalent(&g, &w, &u, 1e-8).unwrap().equivalent);
        assert_ne!(u, w);
        assert_eq!(unbalance(&g, &w, 0, 2, LogNormalParams::default()).unwrap(), w);
        let plan = unbalance_plan(&g, 1000, 2, LogNormalParams::default()).unwrap();
        assert!(plan.ops.iter().all(|op| g.is_hidden(op.node())));
        let chain = NetworkGraph::layered(&[1, 1]).unwrap();
        assert!(unbalance(&chain, &WeightVector::new(vec![1.0]), 1, 0, LogNormalParams::default()).is_err());
    }

    #[test]
    fn oracle_chain() {
        let g = NetworkGraph::layered(&[1, 1]).unwrap();
        let w = WeightVector::new(vec![-2.5]);
        let b = balance_oracle(&g, &w, 2.0).unwrap();
        assert_eq!(b.weights, w);
        assert_eq!(b.value, 2.5);
        assert_eq!(path_norm_dp(&g, &w, 2.0).unwrap(), 2.5);
    }

    #[test]
    fn oracle_diamond() {
        // Independent check by grid search over the two hidden log-scales.
        let (g, w) = diamond([4.0, 1.0, 1.0, 1.0]);
        let objective = |s1: f64, s2: f64| {
            let (a, b, c, d) = (4.0 * s1.exp(), s2.exp(), (-s1).exp(), (-s2).exp());
            a.max(b).max((c * c + d * d).sqrt()).powi(2)
        };
        let (mut best, mut center, mut radius) = (f64::INFINITY, (0.0, 0.0), 2.0);
        for _ in 0..8 {
            let steps = 200;
            let (c1, c2) = center;
            for i in 0..=steps {
                for j in 0..=steps {
                    let s1 = c1 - radius + 2.0 * radius * i as f64 / steps as f64;
                    let s2 = c2 - radius + 2.0 * radius * j as f64 / steps as f64;
                    let v = objective(s1, s2);
                    if v < best {
                        best = v;
                        center = (s1, s2);
                    }
                }
            }
            radius /= 10.0;
        }
        let oracle = balance_oracle(&g, &w, 2.0).unwrap();
        assert!((oracle.value - 17f64.sqrt()).abs() < 1e-9 * 17f64.sqrt(), "{}", oracle.value);
        assert!((best - 17f64.sqrt()).abs() < 1e-6, "grid {best}");
        assert!(oracle.value <= best + 1e-12);
    }

    #[test]
    fn oracle_rejects_zero_units() {
        let (g, w) = diamond([0.0, 1.0, 1.0, 1.0]);
        assert!(matches!(balance_oracle(&g, &w, 2.0), Err(Error::Input(_))));
    }

    #[test]
    fn toy_is_equivalent() {
        let toy = UnbalancedToy::standard();
        let u = toy.unbalanced_weights();
        assert!(check_rescaling_equivalent(&toy.graph, &toy.weights, &u, 1e-12).unwrap().equivalent);
        assert_eq!(u[0], 10.0);
        assert_eq!(u[4], 0.1);
    }
}
