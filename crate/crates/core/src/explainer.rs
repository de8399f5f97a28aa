//! Edge-mask explainer with hard masks.
//!
//! A small MLP maps the concatenated final-layer embeddings of an edge's
//! endpoints to a logit `ω`. Soft weights come from the binary concrete
//! relaxation `s = σ((ω + noise·(ln u − ln(1 − u))) / τ)`, and the classifier
//! only ever sees the binarized mask `e`. Gradients cross the binarization
//! with a straight-through estimator (`∂e/∂s := 1`). The sparsity penalty is
//! the normalized edge count of `e`, i.e. an L0 term on the hard mask.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{argmax, backbone_forward, BackboneParams, GraphBatch};
use crate::error::{Error, Result};
use crate::graph::{EdgeMask, Graph, PolicyTag, SubgraphBag};
use crate::seed::derive_seed;
use crate::tensor::{
    collect_grads, join, sigmoid, Adam, Binder, CustomOp, Linear, LinearVars, Matrix, Module,
    SparseMatrix, Tape, Var,
};

pub const DEFAULT_FRACTIONS: [f64; 8] = [0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75];

/// MLP `[z_i ; z_j] ↦ ω_ij`: linear(2h→h), ReLU, linear(h→1).
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainerParams {
    pub lin1: Linear,
    pub lin2: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct ExplainerVars {
    lin1: LinearVars,
    lin2: LinearVars,
}

impl ExplainerParams {
    pub fn init<R: Rng>(rng: &mut R, hidden: usize) -> Self {
        Self {
            lin1: Linear::init(rng, 2 * hidden, hidden),
            lin2: Linear::init(rng, hidden, 1),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        Self {
            lin1: Linear::zeros(2 * hidden, hidden),
            lin2: Linear::zeros(hidden, 1),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.lin1.input_dim() / 2
    }

    pub fn bind(&self, b: &mut Binder<'_>) -> ExplainerVars {
        ExplainerVars {
            lin1: self.lin1.bind(b),
            lin2: self.lin2.bind(b),
        }
    }
}

impl Module for ExplainerParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        self.lin1.visit(&join(prefix, "lin1"), f);
        self.lin2.visit(&join(prefix, "lin2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.lin1.visit_mut(&join(prefix, "lin1"), f);
        self.lin2.visit_mut(&join(prefix, "lin2"), f);
    }
}

/// Row selectors picking the two endpoints of every edge.
#[derive(Debug, Clone)]
pub struct EdgeEndpoints {
    pub src: Arc<SparseMatrix>,
    pub dst: Arc<SparseMatrix>,
}

impl EdgeEndpoints {
    pub fn new(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let e = edges.len();
        let src = edges
            .iter()
            .enumerate()
            .map(|(k, &(i, _))| (k, i, 1.0))
            .collect();
        let dst = edges
            .iter()
            .enumerate()
            .map(|(k, &(_, j))| (k, j, 1.0))
            .collect();
        Ok(Self {
            src: Arc::new(SparseMatrix::new(e, num_nodes, src)?),
            dst: Arc::new(SparseMatrix::new(e, num_nodes, dst)?),
        })
    }
}

impl ExplainerVars {
    /// `|E|×1` edge logits from node embeddings `z`.
    pub fn forward(&self, tape: &mut Tape, z: Var, ends: &EdgeEndpoints) -> Result<Var> {
        let zi = tape.spmm(ends.src.clone(), z)?;
        let zj = tape.spmm(ends.dst.clone(), z)?;
        let cat = tape.concat_cols(zi, zj)?;
        let h = self.lin1.forward(tape, cat)?;
        let h = tape.relu(h);
        self.lin2.forward(tape, h)
    }
}

/// One logit per undirected edge, in the graph's canonical edge order.
pub fn edge_logits(z: &Matrix, g: &Graph, p: &ExplainerParams) -> Result<Vec<f64>> {
    if z.nrows() != g.num_nodes() || z.ncols() != p.embedding_dim() {
        return Err(Error::dim(format!(
            "embeddings {}x{} for {} nodes and explainer width {}",
            z.nrows(),
            z.ncols(),
            g.num_nodes(),
            p.embedding_dim()
        )));
    }
    let mut tape = Tape::new();
    let vars = p.bind(&mut Binder::new(&mut tape, false));
    let zv = tape.constant(z.clone());
    let ends = EdgeEndpoints::new(g.num_nodes(), g.edges())?;
    let w = vars.forward(&mut tape, zv, &ends)?;
    Ok(tape.value(w).column(0).to_vec())
}

/// Logistic noise `ln u − ln(1 − u)` per edge, drawn from `rng`.
fn logistic_noise<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(f64::EPSILON, 1.0 - f64::EPSILON);
            u.ln() - (1.0 - u).ln()
        })
        .collect()
}

/// Binary concrete sample `σ((ω + noise_scale·L) / τ)` with logistic `L`.
pub fn concrete_sample(omega: &[f64], tau: f64, noise_scale: f64, seed: u64) -> Result<Vec<f64>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::arg(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = logistic_noise(&mut rng, omega.len());
    Ok(omega
        .iter()
        .zip(noise)
        .map(|(&w, l)| sigmoid((w + noise_scale * l) / tau))
        .collect())
}

/// Hard threshold `e = 1{s > threshold}`.
pub fn binarize_ste(s: &[f64], threshold: f64) -> EdgeMask {
    let mut m = EdgeMask::from_bits(s.iter().map(|&v| v > threshold).collect());
    m.soft = Some(s.to_vec());
    m.threshold_used = Some(threshold);
    m
}

/// Indices of the `k` largest scores, ties broken toward the lower index.
fn top_indices(s: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Mask selecting exactly the `k` highest soft weights.
pub fn topk_binarize(s: &[f64], k: usize) -> Result<EdgeMask> {
    if k == 0 || k > s.len() {
        return Err(Error::arg(format!("budget {k} outside 1..={}", s.len())));
    }
    let mut bits = vec![false; s.len()];
    for i in top_indices(s, k) {
        bits[i] = true;
    }
    let mut m = EdgeMask::from_bits(bits);
    m.soft = Some(s.to_vec());
    m.budget = Some(k);
    Ok(m)
}

/// Straight-through binarization: the forward value is the hard mask, the
/// backward pass copies the incoming gradient to the soft weights.
struct StraightThrough;

impl CustomOp for StraightThrough {
    fn name(&self) -> &str {
        "straight_through"
    }

    fn backward(&self, _inputs: &[&Matrix], _output: &Matrix, grad: &Matrix) -> Vec<Matrix> {
        vec![grad.clone()]
    }
}

/// Thresholded hard mask of a soft-weight column, with STE backward.
pub fn ste_threshold(tape: &mut Tape, s: Var, threshold: f64) -> Var {
    let hard = tape
        .value(s)
        .mapv(|v| if v > threshold { 1.0 } else { 0.0 });
    tape.custom(Arc::new(StraightThrough), &[s], hard)
}

/// Top-`k` hard mask of a soft-weight column, with STE backward.
pub fn ste_topk(tape: &mut Tape, s: Var, k: usize) -> Result<Var> {
    let sv: Vec<f64> = tape.value(s).column(0).to_vec();
    let mask = topk_binarize(&sv, k)?;
    let hard = Array2::from_shape_vec((sv.len(), 1), mask.weights()).expect("column");
    Ok(tape.custom(Arc::new(StraightThrough), &[s], hard))
}

/// `CE(masked_logits, target) + λ·Σe/|E|`.
pub fn explainer_loss(
    masked_logits: &[f64],
    target: usize,
    e: &EdgeMask,
    lambda: f64,
) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::arg(format!(
            "sparsity weight must be non-negative, got {lambda}"
        )));
    }
    let mut tape = Tape::new();
    let l = tape.constant(
        Array2::from_shape_vec((1, masked_logits.len()), masked_logits.to_vec()).expect("row"),
    );
    let ce = tape.softmax_cross_entropy(l, &[target])?;
    let sparsity = if e.is_empty() {
        0.0
    } else {
        e.count() as f64 / e.len() as f64
    };
    Ok(tape.scalar(ce) + lambda * sparsity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    pub temperature_start: f64,
    pub temperature_end: f64,
    /// Weight λ of the normalized hard-mask edge count.
    pub sparsity_weight: f64,
    /// Logistic noise scale used when sampling bags at inference.
    pub noise_scale: f64,
    /// Logistic noise scale used while training the explainer.
    pub train_noise_scale: f64,
    pub threshold: f64,
    pub bag_size: usize,
    pub fractions: Vec<f64>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            temperature_start: 5.0,
            temperature_end: 1.0,
            sparsity_weight: 0.1,
            noise_scale: 1.0,
            train_noise_scale: 1.0,
            threshold: 0.5,
            bag_size: 10,
            fractions: DEFAULT_FRACTIONS.to_vec(),
            epochs: 30,
            lr: 3e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature_start > 0.0 && self.temperature_end > 0.0) {
            return Err(Error::arg("temperatures must be positive"));
        }
        if self.sparsity_weight < 0.0 {
            return Err(Error::arg("sparsity weight must be non-negative"));
        }
        if self.noise_scale < 0.0 || self.train_noise_scale < 0.0 {
            return Err(Error::arg("noise scales must be non-negative"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::arg("threshold must lie in (0, 1)"));
        }
        if self.bag_size == 0 {
            return Err(Error::arg("bag size must be at least 1"));
        }
        if self.fractions.is_empty()
            || self.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0))
            || self.fractions.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::arg(
                "fractions must be non-empty, ascending and in (0, 1]",
            ));
        }
        Ok(())
    }

    /// Linearly annealed temperature for a 1-based epoch.
    pub fn temperature(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.temperature_end;
        }
        let t = (epoch.saturating_sub(1)) as f64 / (self.epochs - 1) as f64;
        self.temperature_start + (self.temperature_end - self.temperature_start) * t.min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerEpoch {
    pub epoch: usize,
    pub temperature: f64,
    pub loss: f64,
    /// Mean fraction of edges kept by the sampled hard masks.
    pub mask_density: f64,
    /// Fraction of graphs whose masked prediction matches the target.
    pub fidelity: f64,
}

/// `B×E` operator averaging a mask over each graph's own edges.
fn density_operator(batch: &GraphBatch) -> Result<Arc<SparseMatrix>> {
    let mut entries = Vec::new();
    for b in 0..batch.num_graphs() {
        let (lo, hi) = (batch.edge_offsets[b], batch.edge_offsets[b + 1]);
        let w = 1.0 / (hi - lo).max(1) as f64;
        entries.extend((lo..hi).map(|k| (b, k, w)));
    }
    Ok(Arc::new(SparseMatrix::new(
        batch.num_graphs(),
        batch.num_edges(),
        entries,
    )?))
}

/// Trains one explainer shared across `graphs` against a frozen backbone.
/// Targets are the backbone's own predictions on the unmasked graphs.
pub fn train_explainer(
    graphs: &[&Graph],
    backbone: &BackboneParams,
    cfg: &ExplainerConfig,
) -> Result<(ExplainerParams, Vec<ExplainerEpoch>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let init = ExplainerParams::init(&mut rng, backbone.hidden());
    train_explainer_from(init, graphs, backbone, cfg)
}

pub fn train_explainer_from(
    mut params: ExplainerParams,
    graphs: &[&Graph],
    backbone: &BackboneParams,
    cfg: &ExplainerConfig,
) -> Result<(ExplainerParams, Vec<ExplainerEpoch>)> {
    cfg.validate()?;
    if graphs.is_empty() {
        return Err(Error::Data("explainer needs at least one graph".into()));
    }
    let targets: Vec<usize> = graphs
        .iter()
        .map(|g| {
            let out = backbone_forward(g, None, backbone)?;
            Ok(argmax(out.logits.row(0).as_slice().expect("row")))
        })
        .collect::<Result<_>>()?;

    let mut opt = Adam::new(&params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let tau = cfg.temperature(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut density_sum, mut faithful) = (0.0, 0.0, 0);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let gs: Vec<&Graph> = chunk.iter().map(|&i| graphs[i]).collect();
            let tg: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let batch = GraphBatch::new(&gs)?;
            let ends = EdgeEndpoints::new(batch.features.nrows(), &batch.edges)?;
            let density = density_operator(&batch)?;

            let mut tape = Tape::new();
            let bb = backbone.bind(&mut Binder::new(&mut tape, false));
            let mut binder = Binder::new(&mut tape, true);
            let ex = params.bind(&mut binder);
            let bound = binder.finish();

            let ones = tape.constant(batch.full_weights());
            let full = bb.forward(&mut tape, &batch, ones)?;
            let omega = ex.forward(&mut tape, full.node_embeddings, &ends)?;
            let noise = Array2::from_shape_vec(
                (batch.num_edges(), 1),
                logistic_noise(&mut rng, batch.num_edges())
                    .into_iter()
                    .map(|l| cfg.train_noise_scale * l)
                    .collect(),
            )
            .expect("column");
            let shifted = tape.add_const(omega, &noise)?;
            let scaled = tape.scale(shifted, 1.0 / tau);
            let soft = tape.sigmoid(scaled);
            let hard = ste_threshold(&mut tape, soft, cfg.threshold);

            let masked = bb.forward(&mut tape, &batch, hard)?;
            let ce = tape.softmax_cross_entropy(masked.logits, &tg)?;
            let per_graph = tape.spmm(density.clone(), hard)?;
            let mean_density = tape.mean_rows(per_graph)?;
            let penalty = tape.scale(mean_density, cfg.sparsity_weight);
            let loss = tape.add(ce, penalty)?;

            let lv = tape.scalar(loss);
            if !lv.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: format!("non-finite explainer loss {lv}"),
                });
            }
            loss_sum += lv * gs.len() as f64;
            density_sum += tape.scalar(mean_density) * gs.len() as f64;
            faithful += tape
                .value(masked.logits)
                .rows()
                .into_iter()
                .zip(&tg)
                .filter(|(r, &t)| argmax(r.as_slice().expect("row")) == t)
                .count();

            let grads = tape.backward(loss)?;
            let grads = collect_grads(&tape, &grads, &bound);
            opt.step(&mut params, &grads).map_err(|e| Error::Training {
                epoch,
                msg: e.to_string(),
            })?;
        }
        let n = graphs.len() as f64;
        history.push(ExplainerEpoch {
            epoch,
            temperature: tau,
            loss: loss_sum / n,
            mask_density: density_sum / n,
            fidelity: faithful as f64 / n,
        });
    }
    Ok((params, history))
}

/// Edge logits of `g` under the frozen backbone and trained explainer.
pub fn explain_logits(
    g: &Graph,
    backbone: &BackboneParams,
    explainer: &ExplainerParams,
) -> Result<Vec<f64>> {
    let z = backbone_forward(g, None, backbone)?.node_embeddings;
    edge_logits(&z, g, explainer)
}

/// `m` hard masks from independent concrete draws, thresholded.
///
/// Draw `j` of graph `graph_id` uses seed `derive_seed(seed, [graph_id, j])`.
#[allow(clippy::too_many_arguments)]
pub fn generate_bag_noise(
    graph_id: usize,
    g: &Graph,
    backbone: &BackboneParams,
    explainer: &ExplainerParams,
    m: usize,
    noise_scale: f64,
    tau: f64,
    threshold: f64,
    seed: u64,
) -> Result<SubgraphBag> {
    if m == 0 {
        return Err(Error::arg("bag size must be at least 1"));
    }
    let omega = explain_logits(g, backbone, explainer)?;
    let masks = (0..m)
        .map(|j| {
            let s_seed = derive_seed(seed, &[graph_id as u64, j as u64]);
            let s = concrete_sample(&omega, tau, noise_scale, s_seed)?;
            let mut mask = binarize_ste(&s, threshold);
            mask.seed = Some(s_seed);
            Ok(mask)
        })
        .collect::<Result<Vec<_>>>()?;
    SubgraphBag::new(graph_id, g, PolicyTag::ExplainNoise, masks)
}

/// Budget for a fraction of `num_edges`: `max(1, ⌈f·|E|⌉)`, capped at `|E|`.
pub fn budget_for(fraction: f64, num_edges: usize) -> usize {
    crate::graph::sample_size(num_edges, fraction)
}

/// One nested top-K mask per fraction on the noise-free soft weights.
pub fn generate_bag_topk(
    graph_id: usize,
    g: &Graph,
    backbone: &BackboneParams,
    explainer: &ExplainerParams,
    fractions: &[f64],
    tau: f64,
) -> Result<SubgraphBag> {
    if fractions.is_empty() {
        return Err(Error::arg("at least one fraction is required"));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::arg(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let e = g.num_edges();
    if e == 0 {
        let mut mask = EdgeMask::full(0);
        mask.budget = Some(0);
        return SubgraphBag::new(graph_id, g, PolicyTag::ExplainTopK, vec![mask]);
    }
    let omega = explain_logits(g, backbone, explainer)?;
    let s: Vec<f64> = omega.iter().map(|&w| sigmoid(w / tau)).collect();
    let masks = fractions
        .iter()
        .map(|&f| topk_binarize(&s, budget_for(f, e)))
        .collect::<Result<Vec<_>>>()?;
    SubgraphBag::new(graph_id, g, PolicyTag::ExplainTopK, masks)
}
