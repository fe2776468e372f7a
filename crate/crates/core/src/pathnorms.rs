//! Group norms, per-unit max norms and the ℓp path regularizer.
//!
//! The path vector has one coordinate per input-to-output path, equal to the
//! product of the weights along it. Its ℓp norm is rescaling invariant and
//! is computed here by one forward sweep of `s(v) = Σ s(u) |w_(u→v)|^p` with
//! `s = 1` at the inputs. The explicit enumeration is kept as an oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Location, Result};
use crate::graph::{count_paths, EdgeId, NetworkGraph, WeightVector};
use crate::rescale::{balance_oracle, RescalingPlan};

/// Exponents of the group norm `μ_{p,q}`; either may be `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupNormParams {
    pub p: f64,
    pub q: f64,
}

impl GroupNormParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        for (name, x) in [("p", p), ("q", q)] {
            if x.is_nan() || x < 1.0 {
                return Err(Error::Config(format!("{name} must be >= 1, got {x}")));
            }
        }
        Ok(GroupNormParams { p, q })
    }
}

/// ℓp norm of a slice; `p = ∞` gives the max absolute value.
pub fn lp_norm(xs: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        xs.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    } else if p == 1.0 {
        xs.iter().map(|x| x.abs()).sum()
    } else if p == 2.0 {
        xs.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else {
        xs.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// `μ_{p,q}`: the ℓq norm, over units, of the ℓp norm of each unit's
/// incoming weights.
pub fn group_norm(g: &NetworkGraph, w: &WeightVector, params: GroupNormParams) -> Result<f64> {
    g.check_weights(w)?;
    let GroupNormParams { p, q } = GroupNormParams::new(params.p, params.q)?;
    let mut incoming = Vec::new();
    let per_unit: Vec<f64> = (0..g.num_nodes())
        .map(|v| {
            incoming.clear();
            incoming.extend(g.in_edges(v).iter().map(|&e| w[e]));
            lp_norm(&incoming, p)
        })
        .collect();
    let value = lp_norm(&per_unit, q);
    if !value.is_finite() {
        return Err(Error::numeric(Location::Loss, "group norm overflowed"));
    }
    Ok(value)
}

/// `μ_{p,∞}`: the largest ℓp norm of any unit's incoming weights.
pub fn max_norm(g: &NetworkGraph, w: &WeightVector, p: f64) -> Result<f64> {
    group_norm(g, w, GroupNormParams::new(p, f64::INFINITY)?)
}

/// Path products in enumeration order.
#[derive(Debug, Clone, PartialEq)]
pub struct PathVector {
    entries: Vec<f64>,
}

impl PathVector {
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self, p: f64) -> f64 {
        lp_norm(&self.entries, p)
    }
}

/// Upper bound on paths the brute-force routines will enumerate.
pub const MAX_ENUMERATED_PATHS: u128 = 1_000_000;

/// Every input-to-output path as a list of edge ids. Inputs are taken in
/// their declared order and out-edges in id order (depth first).
pub fn enumerate_paths(g: &NetworkGraph) -> Result<Vec<Vec<EdgeId>>> {
    let count = count_paths(g);
    if count > MAX_ENUMERATED_PATHS {
        return Err(Error::Input(format!(
            "graph has {count} paths, more than the enumeration limit of {MAX_ENUMERATED_PATHS}"
        )));
    }
    let mut paths = Vec::with_capacity(count as usize);
    let mut stack: Vec<EdgeId> = Vec::new();
    fn dfs(g: &NetworkGraph, v: usize, stack: &mut Vec<EdgeId>, out: &mut Vec<Vec<EdgeId>>) {
        if g.out_edges(v).is_empty() {
            out.push(stack.clone());
            return;
        }
        for &e in g.out_edges(v) {
            stack.push(e);
            dfs(g, g.edge(e).dst, stack, out);
            stack.pop();
        }
    }
    for &v in g.inputs() {
        dfs(g, v, &mut stack, &mut paths);
    }
    Ok(paths)
}

pub fn path_vector_bruteforce(g: &NetworkGraph, w: &WeightVector) -> Result<PathVector> {
    g.check_weights(w)?;
    let entries = enumerate_paths(g)?
        .iter()
        .map(|path| path.iter().map(|&e| w[e]).product())
        .collect();
    Ok(PathVector { entries })
}

/// `φ_p(w) = ‖π(w)‖_p` in one forward sweep. `p = ∞` gives the largest
/// absolute path product.
pub fn path_norm_dp(g: &NetworkGraph, w: &WeightVector, p: f64) -> Result<f64> {
    g.check_weights(w)?;
    if p.is_nan() || p < 1.0 {
        return Err(Error::Config(format!("p must be >= 1, got {p}")));
    }
    let mut s = vec![0.0f64; g.num_nodes()];
    for &v in g.inputs() {
        s[v] = 1.0;
    }
    let inf = p.is_infinite();
    for &v in g.topological_order() {
        let mut acc = s[v];
        for &e in g.in_edges(v) {
            let a = w[e].abs();
            let term = s[g.edge(e).src] * if inf { a } else { pow_abs(a, p) };
            acc = if inf { acc.max(term) } else { acc + term };
        }
        if !acc.is_finite() {
            return Err(Error::numeric(Location::Node(v), "path-norm accumulator overflowed"));
        }
        s[v] = acc;
    }
    let outs = g.outputs().iter().map(|&v| s[v]);
    Ok(if inf {
        outs.fold(0.0, f64::max)
    } else {
        let total: f64 = outs.sum();
        if p == 1.0 {
            total
        } else if p == 2.0 {
            total.sqrt()
        } else {
            total.powf(1.0 / p)
        }
    })
}

#[inline]
pub(crate) fn pow_abs(a: f64, p: f64) -> f64 {
    if p == 2.0 {
        a * a
    } else if p == 1.0 {
        a
    } else {
        a.powf(p)
    }
}

/// Outcome of [`lemma1_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    pub phi: f64,
    /// Largest relative change of `φ_p` under the sampled rescalings.
    pub invariance_deviation: f64,
    /// Smallest `μ_{p,∞}(w̃)^d − φ_p(w)` over the samples.
    pub min_gap: f64,
    /// `min μ_{p,∞}^d` found by [`balance_oracle`].
    pub oracle_value: f64,
    pub oracle_deviation: f64,
}

pub const INVARIANCE_TOL: f64 = 1e-12;
pub const UPPER_BOUND_SLACK: f64 = 1e-9;
pub const ORACLE_TOL: f64 = 1e-6;

/// Checks that `φ_p` equals the smallest `μ_{p,∞}^d` over rescalings:
///
/// 1. `φ_p` is unchanged by `n_samples` random rescaling plans;
/// 2. every sampled `w̃` satisfies `φ_p(w) ≤ μ_{p,∞}(w̃)^d`;
/// 3. the balancing oracle's minimum matches `φ_p(w)`.
///
/// The identity holds for layered networks with a single output unit, which
/// is required here.
pub fn lemma1_check(
    g: &NetworkGraph,
    w: &WeightVector,
    p: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Lemma1Report> {
    if g.outputs().len() != 1 || !g.is_layered() {
        return Err(Error::Input(
            "the min-max-norm identity needs a layered network with one output unit".into(),
        ));
    }
    let d = g.depth() as i32;
    let phi = path_norm_dp(g, w, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut invariance_deviation = 0.0f64;
    let mut min_gap = max_norm(g, w, p)?.powi(d) - phi;
    let has_hidden = g.num_hidden() > 0;
    for _ in 0..n_samples {
        let rescaled = if has_hidden {
            RescalingPlan::random(g, 10, 1e-3, 1e3, &mut rng)?.apply(g, w)?
        } else {
            w.clone()
        };
        let phi_r = path_norm_dp(g, &rescaled, p)?;
        let dev = (phi_r - phi).abs() / phi.abs().max(f64::MIN_POSITIVE);
        invariance_deviation = invariance_deviation.max(dev);
        if dev > INVARIANCE_TOL {
            return Err(Error::CheckFailed {
                check: "rescaling invariance of the path norm".into(),
                deviation: dev,
            });
        }
        let bound = max_norm(g, &rescaled, p)?.powi(d);
        min_gap = min_gap.min(bound - phi);
        if phi > bound * (1.0 + 1e-12) + UPPER_BOUND_SLACK {
            return Err(Error::CheckFailed {
                check: "path norm bounded by rescaled max norm".into(),
                deviation: phi - bound,
            });
        }
    }
    let oracle = balance_oracle(g, w, p)?;
    let oracle_deviation = (oracle.value - phi).abs() / phi.abs().max(f64::MIN_POSITIVE);
    if oracle_deviation > ORACLE_TOL {
        return Err(Error::CheckFailed {
            check: "balanced max norm equals path norm".into(),
            deviation: oracle_deviation,
        });
    }
    Ok(Lemma1Report {
        phi,
        invariance_deviation,
        min_gap,
        oracle_value: oracle.value,
        oracle_deviation,
    })
}
