//! Weight initialization and dropout masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NetworkGraph, NodeKind, WeightVector};
use crate::rescale::{unbalance, LogNormalParams};

/// How initial weights are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum InitSpec {
    Balanced {
        seed: u64,
    },
    /// Balanced weights pushed through `k` random rescalings.
    Unbalanced {
        seed: u64,
        k: usize,
        unbalance_seed: u64,
        #[serde(default)]
        lognormal: LogNormalParams,
    },
}

impl InitSpec {
    pub fn build(&self, g: &NetworkGraph) -> Result<WeightVector> {
        match *self {
            InitSpec::Balanced { seed } => Ok(init_balanced(g, seed)),
            InitSpec::Unbalanced {
                seed,
                k,
                unbalance_seed,
                lognormal,
            } => init_unbalanced(g, seed, k, unbalance_seed, lognormal),
        }
    }
}

/// Each weight into unit `v` is drawn i.i.d. from `N(0, 1 / fan_in(v))`.
/// Edges are visited in id order from a single ChaCha stream, so the result
/// is a pure function of `(graph, seed)`.
pub fn init_balanced(g: &NetworkGraph, seed: u64) -> WeightVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std: Vec<f64> = (0..g.num_nodes())
        .map(|v| match g.fan_in(v) {
            0 => 0.0,
            n => 1.0 / (n as f64).sqrt(),
        })
        .collect();
    g.edges()
        .iter()
        .map(|e| std[e.dst] * rng.sample::<f64, _>(StandardNormal))
        .collect::<Vec<_>>()
        .into()
}

/// Balanced initialization followed by [`unbalance`] with `k` unit draws.
pub fn init_unbalanced(
    g: &NetworkGraph,
    seed: u64,
    k: usize,
    unbalance_seed: u64,
    lognormal: LogNormalParams,
) -> Result<WeightVector> {
    let w = init_balanced(g, seed);
    unbalance(g, &w, k, unbalance_seed, lognormal)
}

/// Per-step unit dropout. Only hidden units are ever dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    retained: Vec<bool>,
    retain_prob: f64,
}

impl DropoutMask {
    /// Draws the mask for training step `step`. Each hidden unit's coin is
    /// read from its own position of a ChaCha stream selected by `step`, so
    /// the draw for `(seed, step, unit)` never depends on other units.
    pub fn sample(g: &NetworkGraph, retain_prob: f64, seed: u64, step: u64) -> Result<Self> {
        check_retain_prob(retain_prob)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step);
        let retained = (0..g.num_nodes())
            .map(|v| {
                if g.kind(v) != NodeKind::Hidden || retain_prob == 1.0 {
                    return true;
                }
                rng.set_word_pos(2 * v as u128);
                rng.random::<f64>() < retain_prob
            })
            .collect();
        Ok(DropoutMask {
            retained,
            retain_prob,
        })
    }

    /// Explicit mask; `retained` is indexed by node id. Non-hidden entries
    /// are forced to true.
    pub fn from_retained(g: &NetworkGraph, mut retained: Vec<bool>, retain_prob: f64) -> Result<Self> {
        check_retain_prob(retain_prob)?;
        if retained.len() != g.num_nodes() {
            return Err(Error::Input(format!(
                "mask has {} entries for {} nodes",
                retained.len(),
                g.num_nodes()
            )));
        }
        for (v, r) in retained.iter_mut().enumerate() {
            if !g.is_hidden(v) {
                *r = true;
            }
        }
        Ok(DropoutMask {
            retained,
            retain_prob,
        })
    }

    #[inline]
    pub fn is_retained(&self, v: usize) -> bool {
        self.retained[v]
    }

    pub fn retain_prob(&self) -> f64 {
        self.retain_prob
    }

    pub fn retained_hidden(&self, g: &NetworkGraph) -> usize {
        g.hidden_nodes().filter(|&v| self.retained[v]).count()
    }
}

fn check_retain_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("retain probability must be in (0, 1], got {p}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netfwd::{loss_and_grad, loss_and_grad_with, Batch, Engine, HiddenMode};

    #[test]
    fn balanced_std_tracks_fan_in() {
        // 4 inputs into 25000 units: 10^5 draws with fan-in 4.
        let g = NetworkGraph::layered(&[4, 25_000, 1]).unwrap();
        let w = init_balanced(&g, 11);
        let first: Vec<f64> = w[..100_000].to_vec();
        let mean = first.iter().sum::<f64>() / first.len() as f64;
        let var = first.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (first.len() - 1) as f64;
        assert!((var.sqrt() - 0.5).abs() < 0.01, "std {}", var.sqrt());

        let chain = NetworkGraph::layered(&[1, 1]).unwrap();
        let draws: Vec<f64> = (0..20_000).map(|s| init_balanced(&chain, s)[0]).collect();
        let var = draws.iter().map(|x| x * x).sum::<f64>() / draws.len() as f64;
        assert!((var.sqrt() - 1.0).abs() < 0.03, "std {}", var.sqrt());
    }

    #[test]
    fn balanced_is_deterministic() {
        let g = NetworkGraph::layered(&[5, 6, 3]).unwrap();
        assert_eq!(init_balanced(&g, 3), init_balanced(&g, 3));
        assert_ne!(init_balanced(&g, 3), init_balanced(&g, 4));
    }

    #[test]
    fn dropout_fraction() {
        let g = NetworkGraph::layered(&[1, 1000, 1]).unwrap();
        let mut kept = 0;
        for step in 0..100 {
            kept += DropoutMask::sample(&g, 0.5, 9, step).unwrap().retained_hidden(&g);
        }
        let frac = kept as f64 / 100_000.0;
        assert!((frac - 0.5).abs() < 0.005, "{frac}");
        let a = DropoutMask::sample(&g, 0.5, 9, 4).unwrap();
        assert_eq!(a, DropoutMask::sample(&g, 0.5, 9, 4).unwrap());
        assert_ne!(a, DropoutMask::sample(&g, 0.5, 9, 5).unwrap());
        assert!(a.is_retained(0) && a.is_retained(1001));
    }

    #[test]
    fn dropout_rejects_bad_prob() {
        let g = NetworkGraph::layered(&[1, 2, 1]).unwrap();
        for p in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(DropoutMask::sample(&g, p, 0, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn keep_all_matches_plain() {
        let g = NetworkGraph::layered(&[3, 5, 2]).unwrap();
        let w = init_balanced(&g, 1);
        let b = Batch::new(vec![0.2, 0.5, 0.9, 0.1, 0.4, 0.3], vec![0, 1], 3).unwrap();
        let mask = DropoutMask::sample(&g, 1.0, 0, 0).unwrap();
        let plain = loss_and_grad(&g, &w, &b).unwrap();
        let masked = loss_and_grad_with(&g, &w, &b, HiddenMode::Dropout(&mask), Engine::Auto).unwrap();
        assert_eq!(plain, masked);
    }

    #[test]
    fn all_dropped_zeroes_everything() {
        let g = NetworkGraph::layered(&[3, 5, 2]).unwrap();
        let w = init_balanced(&g, 1);
        let b = Batch::new(vec![0.2, 0.5, 0.9], vec![1], 3).unwrap();
        let mask = DropoutMask::from_retained(&g, vec![false; g.num_nodes()], 0.5).unwrap();
        for engine in [Engine::Auto, Engine::Generic] {
            let (rep, grad) = loss_and_grad_with(&g, &w, &b, HiddenMode::Dropout(&mask), engine).unwrap();
            assert!((rep.loss - 2f64.ln()).abs() < 1e-15);
            assert!(grad.iter().all(|&x| x == 0.0));
        }
    }
}
