mod common;

use common::*;
use pathnorm::data::{encode_idx, parse_idx_images, parse_idx_labels, split_validation, Dataset};
use pathnorm::graph::{compute_levels, count_paths};
use pathnorm::init::{init_balanced, init_unbalanced};
use pathnorm::netfwd::{forward, loss_and_grad_with, Engine, HiddenMode};
use pathnorm::optim::{compute_gamma, OptimizerKind, OptimizerState};
use pathnorm::pathnorms::{enumerate_paths, max_norm, path_norm_dp, path_vector_bruteforce};
use pathnorm::rescale::{check_rescaling_equivalent, LogNormalParams, RescalingPlan};
use pathnorm::{NetworkGraph, WeightVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dp_matches_enumerated_path_norm(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_dag(&mut r, 12, 1);
        let w = uniform_weights(&mut r, &g, -2.0, 2.0);
        let pi = path_vector_bruteforce(&g, &w).unwrap();
        prop_assert_eq!(pi.len() as u128, count_paths(&g));
        for p in [1.0, 2.0, 3.0, 1.5] {
            let dp = path_norm_dp(&g, &w, p).unwrap();
            prop_assert!(rel_err(dp, pi.norm(p)) <= 1e-10, "p={} dp={} bf={}", p, dp, pi.norm(p));
        }
        let dp_inf = path_norm_dp(&g, &w, f64::INFINITY).unwrap();
        prop_assert!(rel_err(dp_inf, pi.norm(f64::INFINITY)) <= 1e-12);
    }

    #[test]
    fn gamma_matches_definition(seed in any::<u64>(), p in prop::sample::select(vec![1.0, 2.0, 3.0])) {
        let mut r = rng(seed);
        let g = random_dag(&mut r, 12, 1);
        let w = uniform_weights(&mut r, &g, -2.0, 2.0);
        let got = compute_gamma(&g, &compute_levels(&g), &w, p).unwrap();
        let want = gamma_by_enumeration(&g, &w, p);
        for (e, (a, b)) in got.gamma_edge.iter().zip(&want).enumerate() {
            prop_assert!(rel_err(*a, *b) <= 1e-10, "edge {}: {} vs {}", e, a, b);
        }
        for &v in g.inputs() {
            prop_assert_eq!(got.gamma_in[v], 1.0);
        }
        for &v in g.outputs() {
            prop_assert_eq!(got.gamma_out[v], 1.0);
        }
    }

    #[test]
    fn path_norm_is_rescaling_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_dag(&mut r, 12, 1);
        prop_assume!(g.num_hidden() > 0);
        let w = uniform_weights(&mut r, &g, -2.0, 2.0);
        let plan = RescalingPlan::random(&g, 10, 0.01, 100.0, &mut r).unwrap();
        let v = plan.apply(&g, &w).unwrap();
        for p in [1.0, 2.0, 3.0] {
            prop_assert!(rel_err(path_norm_dp(&g, &w, p).unwrap(), path_norm_dp(&g, &v, p).unwrap()) <= 1e-12);
        }
        let back = plan.inverse().apply(&g, &v).unwrap();
        for (a, b) in w.iter().zip(back.iter()) {
            prop_assert!(rel_err(*a, *b) <= 1e-12);
        }
        prop_assert!(check_rescaling_equivalent(&g, &w, &v, 1e-12).unwrap().equivalent);
    }

    #[test]
    fn network_function_is_rescaling_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_dag(&mut r, 12, 1);
        prop_assume!(g.num_hidden() > 0);
        let w = uniform_weights(&mut r, &g, -2.0, 2.0);
        let v = RescalingPlan::random(&g, 10, 0.1, 10.0, &mut r).unwrap().apply(&g, &w).unwrap();
        let x: Vec<f64> = (0..g.inputs().len()).map(|_| r.random::<f64>()).collect();
        let a = forward(&g, &w, &x).unwrap();
        let b = forward(&g, &v, &x).unwrap();
        let scale = 1.0 + a.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        for (s, t) in a.iter().zip(&b) {
            prop_assert!((s - t).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn relu_networks_are_positively_homogeneous(seed in any::<u64>(), alpha in 0.01f64..100.0) {
        let mut r = rng(seed);
        let g = random_dag(&mut r, 12, 1);
        let w = uniform_weights(&mut r, &g, -2.0, 2.0);
        let x: Vec<f64> = (0..g.inputs().len()).map(|_| r.random::<f64>()).collect();
        let xs: Vec<f64> = x.iter().map(|v| v * alpha).collect();
        let a = forward(&g, &w, &x).unwrap();
        let b = forward(&g, &w, &xs).unwrap();
        for (s, t) in a.iter().zip(&b) {
            prop_assert!((s * alpha - t).abs() <= 1e-12 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn levels_follow_relabeling(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_dag(&mut r, 12, 1);
        let n = g.num_nodes();
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut r);
        let edges: Vec<(usize, usize)> = g.edges().iter().map(|e| (perm[e.src], perm[e.dst])).collect();
        let ins: Vec<usize> = g.inputs().iter().map(|&v| perm[v]).collect();
        let outs: Vec<usize> = g.outputs().iter().map(|&v| perm[v]).collect();
        let h = NetworkGraph::new(n, &edges, &ins, &outs).unwrap();
        let (lg, lh) = (compute_levels(&g), compute_levels(&h));
        prop_assert_eq!(lg.depth(), lh.depth());
        prop_assert_eq!(g.depth(), h.depth());
        for (v, &pv) in perm.iter().enumerate() {
            prop_assert_eq!(lg.in_level(v), lh.in_level(pv));
            prop_assert_eq!(lg.out_level(v), lh.out_level(pv));
        }
        prop_assert_eq!(count_paths(&g), count_paths(&h));
        prop_assert_eq!(count_paths(&g), enumerate_paths(&g).unwrap().len() as u128);
        for e in h.edges().windows(2) {
            let key = |x: &pathnorm::graph::Edge| (h.topo_position(x.src), h.topo_position(x.dst));
            prop_assert!(key(&e[0]) < key(&e[1]));
        }
    }

    #[test]
    fn engines_agree(seed in any::<u64>()) {
        let mut r = rng(seed);
        let sizes = random_layers(&mut r, 4, 6, 2);
        let g = NetworkGraph::layered(&sizes).unwrap();
        let w = uniform_weights(&mut r, &g, -1.0, 1.0);
        let batch = random_batch(&mut r, 7, sizes[0], *sizes.last().unwrap());
        let (ra, ga) = loss_and_grad_with(&g, &w, &batch, HiddenMode::Plain, Engine::Auto).unwrap();
        let (rb, gb) = loss_and_grad_with(&g, &w, &batch, HiddenMode::Plain, Engine::Generic).unwrap();
        prop_assert!(rel_err(ra.loss, rb.loss) <= 1e-12);
        for (a, b) in ga.iter().zip(gb.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn unbalanced_init_is_equivalent(seed in any::<u64>(), k in 0usize..40) {
        let g = NetworkGraph::layered(&[5, 6, 6, 3]).unwrap();
        let b = init_balanced(&g, seed);
        let u = init_unbalanced(&g, seed, k, seed ^ 1, LogNormalParams::default()).unwrap();
        prop_assert!(check_rescaling_equivalent(&g, &b, &u, 1e-8).unwrap().equivalent);
        prop_assert!(rel_err(path_norm_dp(&g, &b, 2.0).unwrap(), path_norm_dp(&g, &u, 2.0).unwrap()) <= 1e-12);
        if k == 0 {
            prop_assert_eq!(b, u);
        }
    }

    #[test]
    fn pathsgd_keeps_extreme_rescalings_equivalent(seed in any::<u64>()) {
        let mut r = rng(seed);
        let sizes = random_layers(&mut r, 4, 5, 2);
        let g = NetworkGraph::layered(&sizes).unwrap();
        prop_assume!(g.num_hidden() > 0);
        let lv = compute_levels(&g);
        let w0 = init_balanced(&g, seed);
        let v0 = RescalingPlan::random(&g, 10, 1e-4, 1e4, &mut r).unwrap().apply(&g, &w0).unwrap();
        let (mut w, mut v) = (w0, v0);
        let mut sw = OptimizerState::new(OptimizerKind::PathSgd, 0.05, g.num_edges()).unwrap();
        let mut sv = sw.clone();
        for _ in 0..5 {
            let batch = random_batch(&mut r, 4, sizes[0], *sizes.last().unwrap());
            let (_, gw) = loss_and_grad_with(&g, &w, &batch, HiddenMode::Plain, Engine::Auto).unwrap();
            let (_, gv) = loss_and_grad_with(&g, &v, &batch, HiddenMode::Plain, Engine::Auto).unwrap();
            sw.step(&g, &lv, &mut w, &gw).unwrap();
            sv.step(&g, &lv, &mut v, &gv).unwrap();
        }
        let rep = check_rescaling_equivalent(&g, &w, &v, 1e-8).unwrap();
        prop_assert!(rep.equivalent, "deviation {}", rep.max_deviation);
    }

    #[test]
    fn idx_round_trip(seed in any::<u64>(), rows in 1usize..4, cols in 1usize..4, n in 0usize..20) {
        let mut r = rng(seed);
        let dim = rows * cols;
        let feats: Vec<f64> = (0..n * dim).map(|_| r.random_range(0u8..=255) as f64 / 255.0).collect();
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..10)).collect();
        let d = Dataset::new("t", dim, 10, feats.clone(), labels.clone()).unwrap();
        let (img, lab) = encode_idx(&d, rows, cols).unwrap();
        let (count, rr, cc, pixels) = parse_idx_images("img", &img).unwrap();
        prop_assert_eq!((count, rr, cc), (n, rows, cols));
        let back: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
        prop_assert_eq!(back, feats);
        let lb: Vec<usize> = parse_idx_labels("lab", &lab).unwrap().iter().map(|&y| y as usize).collect();
        prop_assert_eq!(lb, labels);
    }

    #[test]
    fn splits_are_disjoint_partitions(seed in any::<u64>(), n in 1usize..60, frac in 0.0f64..1.0) {
        let holdout = ((n as f64) * frac) as usize;
        prop_assume!(holdout < n);
        let feats: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let d = Dataset::new("t", 1, 3, feats, labels).unwrap();
        let (tr, va) = split_validation(&d, holdout, seed).unwrap();
        prop_assert_eq!(va.len(), holdout);
        prop_assert_eq!(tr.len() + va.len(), n);
        let mut all: Vec<u64> = tr.features().iter().chain(va.features()).map(|x| x.to_bits()).collect();
        all.sort_unstable();
        let mut orig: Vec<u64> = d.features().iter().map(|x| x.to_bits()).collect();
        orig.sort_unstable();
        prop_assert_eq!(all, orig);
        let (tr2, va2) = split_validation(&d, holdout, seed).unwrap();
        prop_assert_eq!(tr, tr2);
        prop_assert_eq!(va, va2);
    }

    #[test]
    fn adagrad_accumulator_never_decreases(grads in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..20)) {
        let g = NetworkGraph::layered(&[3, 1]).unwrap();
        let lv = compute_levels(&g);
        let mut st = OptimizerState::new(OptimizerKind::AdaGrad, 0.1, 3).unwrap();
        let mut w = WeightVector::zeros(3);
        let mut prev = vec![0.0; 3];
        for gr in &grads {
            st.step(&g, &lv, &mut w, gr).unwrap();
            prop_assert!(st.adagrad_accum.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = st.adagrad_accum.clone();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn layered_path_count_is_product_of_widths(sizes in prop::collection::vec(1usize..7, 2..6)) {
        let g = NetworkGraph::layered(&sizes).unwrap();
        prop_assert_eq!(count_paths(&g), sizes.iter().map(|&s| s as u128).product::<u128>());
        prop_assert_eq!(g.depth(), sizes.len() - 1);
        let lv = compute_levels(&g);
        prop_assert_eq!(lv.v_in(0).len(), sizes[0]);
    }
}

#[test]
fn unbalancing_raises_max_norm_almost_surely() {
    let g = NetworkGraph::layered(&[6, 8, 8, 3]).unwrap();
    let trials = 200;
    let larger = (0..trials)
        .filter(|&s| {
            let b = init_balanced(&g, s);
            let u = init_unbalanced(&g, s, 1, s + 1000, LogNormalParams::default()).unwrap();
            max_norm(&g, &u, 2.0).unwrap() > max_norm(&g, &b, 2.0).unwrap()
        })
        .count();
    assert!(larger as f64 >= 0.95 * trials as f64, "{larger}/{trials}");
}
