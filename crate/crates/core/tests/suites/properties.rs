//! Property suites: mask hardness and budgets, permutation invariance, the
//! straight-through identity, policy cardinalities, TUD round-trips,
//! heatmap arithmetic and seeded determinism.

use ndarray::Array2;
use proptest::prelude::*;
use proptest::proptest;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgnn_core::backbone::BackboneParams;
use sgnn_core::dss::{dss_forward, DssParams};
use sgnn_core::explainer::{
    binarize_ste, budget_for, concrete_sample, generate_bag_noise, generate_bag_topk,
    ste_threshold, topk_binarize, ExplainerParams, DEFAULT_FRACTIONS,
};
use sgnn_core::graph::{
    load_tud_dataset, policy_edge_deleted, policy_node_deleted, sample_bag, write_tud_dataset,
    EdgeMask, FeatureSpec, Graph, GraphDataset, PolicyTag, SubgraphBag,
};
use sgnn_core::pipeline::aggregate_heatmap;
use sgnn_core::tensor::{sigmoid, Tape};

/// Random simple graph on 2..=7 nodes with at least one edge.
fn graph_strategy() -> impl Strategy<Value = Graph> {
    (2usize..=7).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        let m = pairs.len();
        (
            Just(pairs),
            proptest::collection::vec(any::<bool>(), m),
            0usize..2,
        )
            .prop_filter_map("at least one edge", move |(pairs, keep, label)| {
                let edges: Vec<(usize, usize)> = pairs
                    .iter()
                    .zip(&keep)
                    .filter(|(_, &k)| k)
                    .map(|(&e, _)| e)
                    .collect();
                if edges.is_empty() {
                    return None;
                }
                Graph::unlabeled(n, edges, label).ok()
            })
    })
}

fn random_bag(g: &Graph, bits: &[bool], m: usize) -> SubgraphBag {
    let e = g.num_edges();
    let masks = (0..m)
        .map(|j| EdgeMask::from_bits((0..e).map(|k| bits[(j * e + k) % bits.len()]).collect()))
        .collect();
    SubgraphBag::new(0, g, PolicyTag::ExplainNoise, masks).unwrap()
}

fn dss(seed: u64) -> DssParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bb = BackboneParams::init_with(&mut rng, 1, 8, 3, 2);
    DssParams::from_backbone(&mut rng, &bb)
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn threshold_masks_are_hard_and_exact() {
    proptest!(ProptestConfig::with_cases(64), |(s in proptest::collection::vec(0.0f64..1.0, 1..40), thr in 0.05f64..0.95)| {
        let m = binarize_ste(&s, thr);
        for (b, v) in m.bits.iter().zip(&s) {
            prop_assert_eq!(*b, *v > thr);
        }
        prop_assert_eq!(m.weights().iter().filter(|&&w| w != 0.0 && w != 1.0).count(), 0);
    });
}

pub fn topk_budget_and_nesting() {
    proptest!(ProptestConfig::with_cases(64), |(s in proptest::collection::vec(0.0f64..1.0, 1..40), fr in proptest::collection::vec(0.01f64..1.0, 1..8))| {
        let mut fr = fr;
        fr.sort_by(f64::total_cmp);
        let masks: Vec<EdgeMask> = fr.iter().map(|&f| topk_binarize(&s, budget_for(f, s.len())).unwrap()).collect();
        for (m, &f) in masks.iter().zip(&fr) {
            prop_assert_eq!(m.count(), budget_for(f, s.len()));
            prop_assert!(m.count() >= 1 && m.count() <= s.len());
        }
        for w in masks.windows(2) {
            prop_assert!(w[0].is_subset_of(&w[1]));
        }
    });
}

pub fn concrete_samples_lie_in_the_open_interval() {
    proptest!(ProptestConfig::with_cases(64), |(omega in proptest::collection::vec(-5.0f64..5.0, 1..20), tau in 0.2f64..5.0, seed in any::<u64>())| {
        let s = concrete_sample(&omega, tau, 1.0, seed).unwrap();
        prop_assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
        let clean = concrete_sample(&omega, tau, 0.0, seed).unwrap();
        for (c, w) in clean.iter().zip(&omega) {
            prop_assert_eq!(*c, sigmoid(w / tau));
        }
    });
}

pub fn ste_gradient_matches_soft_gradient() {
    proptest!(ProptestConfig::with_cases(64), |(omega in proptest::collection::vec(-4.0f64..4.0, 1..20), tau in 0.2f64..5.0)| {
        let col = Array2::from_shape_vec((omega.len(), 1), omega.clone()).unwrap();
        let grad = |hard: bool| {
            let mut t = Tape::new();
            let w = t.leaf(col.clone(), true);
            let sc = t.scale(w, 1.0 / tau);
            let s = t.sigmoid(sc);
            let out = if hard { ste_threshold(&mut t, s, 0.5) } else { s };
            let total = t.sum(out);
            t.backward(total).unwrap().wrt(&t, w)
        };
        prop_assert_eq!(grad(true), grad(false));
    });
}

pub fn policy_cardinalities() {
    proptest!(ProptestConfig::with_cases(64), |(g in graph_strategy())| {
        let ed = policy_edge_deleted(0, &g).unwrap();
        prop_assert_eq!(ed.len(), g.num_edges());
        prop_assert!(ed.masks.iter().all(|m| m.count() == g.num_edges() - 1));
        let nd = policy_node_deleted(0, &g).unwrap();
        prop_assert_eq!(nd.len(), g.num_nodes());
        for (v, m) in nd.masks.iter().enumerate() {
            let expected = g.edges().iter().filter(|&&(i, j)| i != v && j != v).count();
            prop_assert_eq!(m.count(), expected);
            prop_assert_eq!(&m.deleted_nodes, &vec![v]);
        }
    });
}

pub fn sampled_bags_have_ceiling_size() {
    proptest!(ProptestConfig::with_cases(64), |(g in graph_strategy(), f in 0.01f64..1.0, seed in any::<u64>())| {
        let bag = policy_edge_deleted(0, &g).unwrap();
        let s = sample_bag(&bag, f, seed).unwrap();
        let expected = ((f * bag.len() as f64).ceil() as usize).clamp(1, bag.len());
        prop_assert_eq!(s.len(), expected);
        prop_assert!(s.masks.iter().all(|m| bag.masks.contains(m)));
    });
}

pub fn heatmap_weights_are_bag_averages() {
    proptest!(ProptestConfig::with_cases(64), |(g in graph_strategy(), bits in proptest::collection::vec(any::<bool>(), 1..64), m in 1usize..10)| {
        let bag = random_bag(&g, &bits, m);
        let h = aggregate_heatmap(&bag, &g).unwrap();
        prop_assert_eq!(h.edges.len(), g.num_edges());
        for (k, w) in h.weights().into_iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&w));
            let count = bag.masks.iter().filter(|mask| mask.bits[k]).count();
            prop_assert_eq!(w, count as f64 / m as f64);
        }
    });
}

pub fn tud_round_trip() {
    proptest!(ProptestConfig::with_cases(64), |(graphs in proptest::collection::vec(graph_strategy(), 2..6))| {
        let mut graphs = graphs;
        graphs[0] = graphs[0].clone().with_label(0);
        graphs[1] = graphs[1].clone().with_label(1);
        let ds = GraphDataset::new("RAND", graphs, 2, FeatureSpec::Constant).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_tud_dataset(&ds, dir.path(), "RAND").unwrap();
        let back = load_tud_dataset(dir.path(), "RAND", FeatureSpec::Constant).unwrap();
        prop_assert_eq!(back.labels(), ds.labels());
        for (a, b) in back.graphs.iter().zip(&ds.graphs) {
            prop_assert_eq!(a.num_nodes(), b.num_nodes());
            prop_assert_eq!(a.edges(), b.edges());
        }
    });
}

pub fn bag_order_invariance() {
    proptest!(ProptestConfig::with_cases(24), |(g in graph_strategy(), bits in proptest::collection::vec(any::<bool>(), 1..64), m in 1usize..=8, seed in 0u64..1000, perm_seed in any::<u64>())| {
        use rand::seq::SliceRandom;
        let bag = random_bag(&g, &bits, m);
        let p = dss(seed);
        let base = dss_forward(&g, &bag, &p).unwrap().logits;
        let mut shuffled = bag.clone();
        shuffled.masks.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let l = dss_forward(&g, &shuffled, &p).unwrap().logits;
        prop_assert!(max_abs_diff(&base, &l) < 1e-9);
    });
}

pub fn node_permutation_invariance() {
    proptest!(ProptestConfig::with_cases(24), |(g in graph_strategy(), bits in proptest::collection::vec(any::<bool>(), 1..64), m in 1usize..=8, seed in 0u64..1000, perm_seed in any::<u64>())| {
        use rand::seq::SliceRandom;
        let bag = random_bag(&g, &bits, m);
        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let (pg, edge_map) = g.permute(&perm).unwrap();
        let masks = bag.masks.iter().map(|mask| {
            let mut bits = vec![false; pg.num_edges()];
            for (k, &b) in mask.bits.iter().enumerate() {
                bits[edge_map[k]] = b;
            }
            EdgeMask::from_bits(bits)
        }).collect();
        let pbag = SubgraphBag::new(0, &pg, PolicyTag::ExplainNoise, masks).unwrap();
        let p = dss(seed);
        let a = dss_forward(&g, &bag, &p).unwrap().logits;
        let b = dss_forward(&pg, &pbag, &p).unwrap().logits;
        prop_assert!(max_abs_diff(&a, &b) < 1e-9);
    });
}

pub fn node_deleted_bags_are_permutation_invariant() {
    proptest!(ProptestConfig::with_cases(24), |(g in graph_strategy(), seed in 0u64..1000, perm_seed in any::<u64>())| {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let (pg, _) = g.permute(&perm).unwrap();
        let p = dss(seed);
        let a = dss_forward(&g, &policy_node_deleted(0, &g).unwrap(), &p).unwrap().logits;
        let b = dss_forward(&pg, &policy_node_deleted(0, &pg).unwrap(), &p).unwrap().logits;
        prop_assert!(max_abs_diff(&a, &b) < 1e-9);
    });
}

pub fn explainer_bags_are_deterministic() {
    proptest!(ProptestConfig::with_cases(24), |(g in graph_strategy(), seed in any::<u64>())| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bb = BackboneParams::init(&mut rng, 1, 2);
        let ex = ExplainerParams::init(&mut rng, 32);
        let a = generate_bag_noise(3, &g, &bb, &ex, 5, 1.0, 1.0, 0.5, seed).unwrap();
        let b = generate_bag_noise(3, &g, &bb, &ex, 5, 1.0, 1.0, 0.5, seed).unwrap();
        prop_assert_eq!(a, b);
        let t1 = generate_bag_topk(3, &g, &bb, &ex, &DEFAULT_FRACTIONS, 1.0).unwrap();
        let t2 = generate_bag_topk(3, &g, &bb, &ex, &DEFAULT_FRACTIONS, 1.0).unwrap();
        prop_assert_eq!(&t1, &t2);
        for w in t1.masks.windows(2) {
            prop_assert!(w[0].is_subset_of(&w[1]));
        }
    });
}

pub fn zero_noise_bag_masks_are_identical() {
    let g = Graph::unlabeled(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)], 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bb = BackboneParams::init(&mut rng, 1, 2);
    let ex = ExplainerParams::init(&mut rng, 32);
    let bag = generate_bag_noise(0, &g, &bb, &ex, 6, 0.0, 1.0, 0.5, 11).unwrap();
    assert_eq!(bag.len(), 6);
    assert!(bag.masks.iter().all(|m| m.bits == bag.masks[0].bits));
    let single = generate_bag_noise(0, &g, &bb, &ex, 1, 1.0, 1.0, 0.5, 11).unwrap();
    assert_eq!(single.len(), 1);
}

pub fn default_topk_grid_gives_eight_nested_masks() {
    let edges: Vec<(usize, usize)> = (0..20).map(|i| (i, i + 1)).collect();
    let g = Graph::unlabeled(21, edges, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bb = BackboneParams::init(&mut rng, 1, 2);
    let ex = ExplainerParams::init(&mut rng, 32);
    let bag = generate_bag_topk(0, &g, &bb, &ex, &DEFAULT_FRACTIONS, 1.0).unwrap();
    assert_eq!(bag.len(), 8);
    assert_eq!(bag.masks[0].count(), 1);
    let h = aggregate_heatmap(&bag, &g).unwrap();
    // Weights are multiples of 1/8 and follow the soft-score order.
    let soft = bag.masks[0].soft.clone().unwrap();
    let w = h.weights();
    for k in 0..w.len() {
        assert_eq!((w[k] * 8.0).fract(), 0.0);
        for l in 0..w.len() {
            if soft[k] > soft[l] {
                assert!(w[k] >= w[l]);
            }
        }
    }
    let single = generate_bag_topk(0, &g, &bb, &ex, &[0.05], 1.0).unwrap();
    assert_eq!(single.masks[0].count(), 1);
}

pub fn concrete_mean_at_zero_logit_is_one_half() {
    let n = 10_000;
    let mean = (0..n)
        .map(|s| concrete_sample(&[0.0], 1.0, 1.0, s).unwrap()[0])
        .sum::<f64>()
        / n as f64;
    assert!((mean - 0.5).abs() < 0.02, "{mean}");
}

pub const ALL: &[(&str, fn())] = &[
    (
        "threshold_masks_are_hard_and_exact",
        threshold_masks_are_hard_and_exact,
    ),
    ("topk_budget_and_nesting", topk_budget_and_nesting),
    (
        "concrete_samples_lie_in_the_open_interval",
        concrete_samples_lie_in_the_open_interval,
    ),
    (
        "ste_gradient_matches_soft_gradient",
        ste_gradient_matches_soft_gradient,
    ),
    ("policy_cardinalities", policy_cardinalities),
    (
        "sampled_bags_have_ceiling_size",
        sampled_bags_have_ceiling_size,
    ),
    (
        "heatmap_weights_are_bag_averages",
        heatmap_weights_are_bag_averages,
    ),
    ("tud_round_trip", tud_round_trip),
    ("bag_order_invariance", bag_order_invariance),
    ("node_permutation_invariance", node_permutation_invariance),
    (
        "node_deleted_bags_are_permutation_invariant",
        node_deleted_bags_are_permutation_invariant,
    ),
    (
        "explainer_bags_are_deterministic",
        explainer_bags_are_deterministic,
    ),
    (
        "zero_noise_bag_masks_are_identical",
        zero_noise_bag_masks_are_identical,
    ),
    (
        "default_topk_grid_gives_eight_nested_masks",
        default_topk_grid_gives_eight_nested_masks,
    ),
    (
        "concrete_mean_at_zero_logit_is_one_half",
        concrete_mean_at_zero_logit_is_one_half,
    ),
];
