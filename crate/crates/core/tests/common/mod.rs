//! Generators and brute-force references shared by the integration suites.
#![allow(dead_code)]

use pathnorm::graph::EdgeId;
use pathnorm::pathnorms::enumerate_paths;
use pathnorm::{NetworkGraph, WeightVector};
use rand::seq::SliceRandom;
use rand::Rng;

/// A random DAG with at most `max_edges` edges and shuffled node ids.
/// Every node lies on some input-to-output path.
pub fn random_dag(rng: &mut impl Rng, max_edges: usize, min_outputs: usize) -> NetworkGraph {
    loop {
        let n_in = rng.random_range(1..=2);
        let n_hidden = rng.random_range(0..=4);
        let n_out = rng.random_range(min_outputs..=min_outputs.max(2));
        let n = n_in + n_hidden + n_out;
        let hidden: Vec<usize> = (n_in..n_in + n_hidden).collect();
        let outputs: Vec<usize> = (n_in + n_hidden..n).collect();
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let add = |edges: &mut Vec<(usize, usize)>, e: (usize, usize)| {
            if !edges.contains(&e) {
                edges.push(e);
            }
        };
        for &h in &hidden {
            let src = rng.random_range(0..h);
            add(&mut edges, (src, h));
            let dst = rng.random_range(h + 1..n);
            add(&mut edges, (h, dst));
        }
        for &o in &outputs {
            let src = rng.random_range(0..n_in + n_hidden);
            add(&mut edges, (src, o));
        }
        for i in 0..n_in {
            if !edges.iter().any(|e| e.0 == i) {
                let dst = rng.random_range(n_in..n);
                add(&mut edges, (i, dst));
            }
        }
        let extra = rng.random_range(0..=4);
        for _ in 0..extra {
            let src = rng.random_range(0..n_in + n_hidden);
            let dst = rng.random_range(n_in.max(src + 1)..n);
            add(&mut edges, (src, dst));
        }
        if edges.len() > max_edges {
            continue;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let relabeled: Vec<(usize, usize)> = edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        let inputs: Vec<usize> = (0..n_in).map(|v| perm[v]).collect();
        let outs: Vec<usize> = outputs.iter().map(|&v| perm[v]).collect();
        match NetworkGraph::new(n, &relabeled, &inputs, &outs) {
            Ok(g) => return g,
            Err(_) => continue,
        }
    }
}

pub fn uniform_weights(rng: &mut impl Rng, g: &NetworkGraph, lo: f64, hi: f64) -> WeightVector {
    WeightVector::new((0..g.num_edges()).map(|_| rng.random_range(lo..hi)).collect())
}

/// Random layer sizes with the given number of layers.
pub fn random_layers(rng: &mut impl Rng, layers: usize, max_width: usize, min_out: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=max_width)).collect();
    let last = sizes.len() - 1;
    sizes[last] = rng.random_range(min_out..=max_width.max(min_out));
    sizes
}

/// `γ_p(w, e)` straight from its definition: for every path through `e`,
/// the product of `|w|^p` over the other edges of the path, summed and
/// raised to `2/p`.
pub fn gamma_by_enumeration(g: &NetworkGraph, w: &WeightVector, p: f64) -> Vec<f64> {
    let paths: Vec<Vec<EdgeId>> = enumerate_paths(g).expect("small graph");
    let mut sums = vec![0.0; g.num_edges()];
    for path in &paths {
        for (k, &e) in path.iter().enumerate() {
            let prod: f64 = path
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &f)| w[f].abs().powf(p))
                .product();
            sums[e] += prod;
        }
    }
    sums.iter().map(|s| s.powf(2.0 / p)).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Random features in `[0, 1]` and labels below `classes`.
pub fn random_batch(rng: &mut impl Rng, rows: usize, dim: usize, classes: usize) -> pathnorm::netfwd::Batch {
    let x: Vec<f64> = (0..rows * dim).map(|_| rng.random::<f64>()).collect();
    let y: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    pathnorm::netfwd::Batch::new(x, y, dim).unwrap()
}

/// Pre-activations of every non-input node for one input row, by a direct
/// walk in topological order.
pub fn pre_activations(g: &NetworkGraph, w: &WeightVector, x: &[f64]) -> Vec<(usize, f64)> {
    let mut value = vec![0.0; g.num_nodes()];
    for (k, &v) in g.inputs().iter().enumerate() {
        value[v] = x[k];
    }
    let mut out = Vec::new();
    for &v in g.topological_order() {
        if g.in_edges(v).is_empty() {
            continue;
        }
        let z: f64 = g.in_edges(v).iter().map(|&e| w[e] * value[g.edge(e).src]).sum();
        out.push((v, z));
        value[v] = if g.is_hidden(v) { z.max(0.0) } else { z };
    }
    out
}
