//! Central-difference checks for every tape primitive and the three training
//! losses, on graphs of at most six nodes.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgnn_core::backbone::{BackboneParams, GraphBatch};
use sgnn_core::dss::{BagBatch, DssParams};
use sgnn_core::explainer::{ste_threshold, EdgeEndpoints, ExplainerParams};
use sgnn_core::graph::{policy_edge_deleted, policy_node_deleted, Graph};
use sgnn_core::tensor::{grad_check, Binder, Matrix, Module, SparseMatrix, Tape, Var};
use sgnn_core::Result;

const TOL: f64 = 1e-4;
const H: f64 = 1e-6;

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

/// Entries bounded away from zero so ReLU kinks are not straddled.
fn rand_off_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Array2::from_shape_fn((r, c), |_| {
        let v: f64 = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn check<F>(name: &str, f: F, points: &[Matrix])
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let r = grad_check(f, points, H).unwrap();
    assert!(r.max_rel_error < TOL, "{name}: rel err {}", r.max_rel_error);
}

/// Weighted sum so each output coordinate contributes a distinct gradient.
fn probe(t: &mut Tape, x: Var, w: &Matrix) -> Result<Var> {
    let c = t.constant(w.clone());
    let p = t.mul(x, c)?;
    Ok(t.sum(p))
}

fn house() -> Graph {
    Graph::unlabeled(5, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)], 1).unwrap()
}

pub fn elementwise_and_linear_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = rand_matrix(&mut rng, 3, 4);
    let b = rand_matrix(&mut rng, 4, 2);
    let c = rand_matrix(&mut rng, 3, 4);
    let row = rand_matrix(&mut rng, 1, 4);
    let w34 = rand_matrix(&mut rng, 3, 4);
    let w32 = rand_matrix(&mut rng, 3, 2);
    let eps = rand_matrix(&mut rng, 1, 1);

    check(
        "matmul",
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            probe(t, y, &w32)
        },
        &[a.clone(), b],
    );
    check(
        "add",
        |t, v| {
            let y = t.add(v[0], v[1])?;
            probe(t, y, &w34)
        },
        &[a.clone(), c.clone()],
    );
    check(
        "add_row",
        |t, v| {
            let y = t.add_row(v[0], v[1])?;
            probe(t, y, &w34)
        },
        &[a.clone(), row],
    );
    check(
        "add_const",
        |t, v| {
            let y = t.add_const(v[0], &c)?;
            probe(t, y, &w34)
        },
        std::slice::from_ref(&a),
    );
    check(
        "scale",
        |t, v| {
            let y = t.scale(v[0], -2.5);
            probe(t, y, &w34)
        },
        std::slice::from_ref(&a),
    );
    check(
        "scale_self",
        |t, v| {
            let y = t.scale_self(v[0], v[1])?;
            probe(t, y, &w34)
        },
        &[a.clone(), eps],
    );
    check(
        "mul",
        |t, v| {
            let y = t.mul(v[0], v[1])?;
            probe(t, y, &w34)
        },
        &[a.clone(), c.clone()],
    );
    check(
        "sigmoid",
        |t, v| {
            let y = t.sigmoid(v[0]);
            probe(t, y, &w34)
        },
        std::slice::from_ref(&a),
    );
    let off = rand_off_zero(&mut rng, 3, 4);
    check(
        "relu",
        |t, v| {
            let y = t.relu(v[0]);
            probe(t, y, &w34)
        },
        &[off],
    );
}

pub fn reductions_and_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_matrix(&mut rng, 3, 4);
    let b = rand_matrix(&mut rng, 3, 2);
    let w14 = rand_matrix(&mut rng, 1, 4);
    let w36 = rand_matrix(&mut rng, 3, 6);
    check(
        "sum_rows",
        |t, v| {
            let y = t.sum_rows(v[0]);
            probe(t, y, &w14)
        },
        std::slice::from_ref(&a),
    );
    check(
        "mean_rows",
        |t, v| {
            let y = t.mean_rows(v[0])?;
            probe(t, y, &w14)
        },
        std::slice::from_ref(&a),
    );
    check("sum", |t, v| Ok(t.sum(v[0])), std::slice::from_ref(&a));
    check(
        "concat_cols",
        |t, v| {
            let y = t.concat_cols(v[0], v[1])?;
            probe(t, y, &w36)
        },
        &[a, b],
    );
}

pub fn cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logits = rand_matrix(&mut rng, 4, 3);
    check(
        "softmax_cross_entropy",
        |t, v| t.softmax_cross_entropy(v[0], &[0, 2, 1, 2]),
        &[logits],
    );
}

pub fn sparse_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = house();
    let x = rand_matrix(&mut rng, 5, 3);
    let w53 = rand_matrix(&mut rng, 5, 3);
    let a = Arc::new(g.adjacency());
    check(
        "spmm",
        |t, v| {
            let y = t.spmm(a.clone(), v[0])?;
            probe(t, y, &w53)
        },
        std::slice::from_ref(&x),
    );
    let rect =
        Arc::new(SparseMatrix::new(2, 5, vec![(0, 1, 0.5), (0, 4, 2.0), (1, 3, -1.0)]).unwrap());
    let w23 = rand_matrix(&mut rng, 2, 3);
    check(
        "spmm_rect",
        |t, v| {
            let y = t.spmm(rect.clone(), v[0])?;
            probe(t, y, &w23)
        },
        std::slice::from_ref(&x),
    );
    let edges: Arc<[(usize, usize)]> = g.edges().into();
    let ew = rand_matrix(&mut rng, g.num_edges(), 1);
    check(
        "edge_aggregate",
        |t, v| {
            let y = t.edge_aggregate(edges.clone(), v[0], v[1])?;
            probe(t, y, &w53)
        },
        &[x, ew],
    );
}

/// Two layers of width 6 keep the oracles fast.
fn small_backbone(seed: u64, input: usize) -> BackboneParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BackboneParams::init_with(&mut rng, input, 6, 2, 2)
}

pub fn backbone_loss_wrt_parameters_and_edge_weights() {
    let g1 = house();
    let g2 = Graph::unlabeled(4, [(0, 1), (1, 2), (2, 3)], 0).unwrap();
    let batch = GraphBatch::new(&[&g1, &g2]).unwrap();
    let p = small_backbone(5, 1);
    let mut points = p.parameters();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    points.push(Array2::from_shape_fn((batch.num_edges(), 1), |_| {
        rng.gen_range(0.2..1.0)
    }));
    let n = points.len();
    check(
        "backbone",
        |t, v| {
            let vars = p.bind(&mut Binder::replay(t, &v[..n - 1]));
            let out = vars.forward(t, &batch, v[n - 1])?;
            t.softmax_cross_entropy(out.logits, &batch.labels)
        },
        &points,
    );
}

pub fn explainer_loss_through_the_straight_through_identity() {
    // The STE loss gradient must equal (∂L/∂e at the hard mask) ⊙ (∂s/∂ω),
    // each factor checked by central differences.
    let g = house();
    let batch = GraphBatch::new(&[&g]).unwrap();
    let bb = small_backbone(7, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ex = ExplainerParams::init(&mut rng, 6);
    let ends = EdgeEndpoints::new(5, &batch.edges).unwrap();
    let tau = 0.8;
    let lambda = 0.3;
    let e_count = batch.num_edges() as f64;

    // Analytic STE gradient with respect to the edge logits.
    let mut t = Tape::new();
    let bbv = bb.bind(&mut Binder::new(&mut t, false));
    let exv = ex.bind(&mut Binder::new(&mut t, false));
    let ones = t.constant(batch.full_weights());
    let full = bbv.forward(&mut t, &batch, ones).unwrap();
    let omega_val = exv.forward(&mut t, full.node_embeddings, &ends).unwrap();
    let omega0 = t.value(omega_val).clone();
    let omega = t.leaf(omega0.clone(), true);
    let sc = t.scale(omega, 1.0 / tau);
    let s = t.sigmoid(sc);
    let e = ste_threshold(&mut t, s, 0.5);
    let masked = bbv.forward(&mut t, &batch, e).unwrap();
    let ce = t.softmax_cross_entropy(masked.logits, &[0]).unwrap();
    let sp = t.sum(e);
    let sp = t.scale(sp, lambda / e_count);
    let loss = t.add(ce, sp).unwrap();
    let g_ste = t.backward(loss).unwrap().wrt(&t, omega);
    let hard = t.value(e).clone();

    // ∂L/∂e at the hard mask, treating e as continuous edge weights.
    let dl_de = grad_check(
        |t, v| {
            let bbv = bb.bind(&mut Binder::new(t, false));
            let masked = bbv.forward(t, &batch, v[0])?;
            let ce = t.softmax_cross_entropy(masked.logits, &[0])?;
            let sp = t.sum(v[0]);
            let sp = t.scale(sp, lambda / e_count);
            t.add(ce, sp)
        },
        &[hard],
        H,
    )
    .unwrap();
    assert!(
        dl_de.max_rel_error < TOL,
        "dL/de rel err {}",
        dl_de.max_rel_error
    );

    // ∂s/∂ω is diagonal; Σs exposes it.
    let ds = grad_check(
        |t, v| {
            let sc = t.scale(v[0], 1.0 / tau);
            let s = t.sigmoid(sc);
            Ok(t.sum(s))
        },
        &[omega0],
        H,
    )
    .unwrap();
    assert!(ds.max_rel_error < TOL);

    for k in 0..g_ste.nrows() {
        let expect = dl_de.numeric[0][[k, 0]] * ds.numeric[0][[k, 0]];
        let err = (g_ste[[k, 0]] - expect).abs() / g_ste[[k, 0]].abs().max(1.0);
        assert!(err < TOL, "edge {k}: {} vs {expect}", g_ste[[k, 0]]);
    }
}

pub fn explainer_network_wrt_its_parameters() {
    let g = house();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = Array2::from_shape_fn((5, 6), |_| rng.gen_range(0.0..1.0));
    let ex = ExplainerParams::init(&mut rng, 6);
    let ends = EdgeEndpoints::new(5, g.edges()).unwrap();
    let w = rand_matrix(&mut rng, g.num_edges(), 1);
    check(
        "explainer_mlp",
        |t, v| {
            let vars = ex.bind(&mut Binder::replay(t, v));
            let zv = t.constant(z.clone());
            let omega = vars.forward(t, zv, &ends)?;
            let s = t.sigmoid(omega);
            probe(t, s, &w)
        },
        &ex.parameters(),
    );
}

pub fn dss_loss_wrt_parameters() {
    let g1 = house();
    let g2 = Graph::unlabeled(4, [(0, 1), (1, 2), (2, 3), (0, 3)], 0).unwrap();
    let b1 = policy_edge_deleted(0, &g1).unwrap();
    let b2 = policy_node_deleted(1, &g2).unwrap();
    let batch = BagBatch::new(&[(&g1, &b1), (&g2, &b2)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = DssParams::from_backbone(&mut rng, &small_backbone(11, 1));
    check(
        "dss",
        |t, v| {
            let vars = p.bind(&mut Binder::replay(t, v));
            let out = vars.forward(t, &batch)?;
            t.softmax_cross_entropy(out.logits, &batch.labels)
        },
        &p.parameters(),
    );
}

pub const ALL: &[(&str, fn())] = &[
    (
        "elementwise_and_linear_primitives",
        elementwise_and_linear_primitives,
    ),
    ("reductions_and_concat", reductions_and_concat),
    ("cross_entropy", cross_entropy),
    ("sparse_primitives", sparse_primitives),
    (
        "backbone_loss_wrt_parameters_and_edge_weights",
        backbone_loss_wrt_parameters_and_edge_weights,
    ),
    (
        "explainer_loss_through_the_straight_through_identity",
        explainer_loss_through_the_straight_through_identity,
    ),
    (
        "explainer_network_wrt_its_parameters",
        explainer_network_wrt_its_parameters,
    ),
    ("dss_loss_wrt_parameters", dss_loss_wrt_parameters),
];
