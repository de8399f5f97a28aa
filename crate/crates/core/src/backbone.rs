//! GIN graph classifier: stacked GIN layers, sum pooling, linear head.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeMask, Graph};
use crate::tensor::{
    collect_grads, join, softmax_rows, Adam, Binder, Linear, LinearVars, Matrix, Module,
    SparseMatrix, Tape, Var,
};

pub const HIDDEN: usize = 32;
pub const NUM_LAYERS: usize = 4;

/// One GIN layer: `MLP((1 + ε)·H + A·H)` with a two-layer MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct GinLayerParams {
    pub lin1: Linear,
    pub lin2: Linear,
    /// `1×1`, learnable.
    pub eps: Matrix,
}

#[derive(Debug, Clone, Copy)]
pub struct GinLayerVars {
    lin1: LinearVars,
    lin2: LinearVars,
    eps: Var,
}

impl GinLayerParams {
    pub fn init<R: rand::Rng>(rng: &mut R, input: usize, hidden: usize) -> Self {
        Self {
            lin1: Linear::init(rng, input, hidden),
            lin2: Linear::init(rng, hidden, hidden),
            eps: Array2::zeros((1, 1)),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            lin1: Linear::zeros(input, hidden),
            lin2: Linear::zeros(hidden, hidden),
            eps: Array2::zeros((1, 1)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.lin1.input_dim()
    }

    pub fn bind(&self, b: &mut Binder<'_>) -> GinLayerVars {
        GinLayerVars {
            lin1: self.lin1.bind(b),
            lin2: self.lin2.bind(b),
            eps: b.bind(&self.eps),
        }
    }
}

impl Module for GinLayerParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        self.lin1.visit(&join(prefix, "lin1"), f);
        self.lin2.visit(&join(prefix, "lin2"), f);
        f(join(prefix, "eps"), &self.eps);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.lin1.visit_mut(&join(prefix, "lin1"), f);
        self.lin2.visit_mut(&join(prefix, "lin2"), f);
        f(join(prefix, "eps"), &mut self.eps);
    }
}

impl GinLayerVars {
    /// Pre-activation layer output. `weights` is the `|E|×1` edge weight
    /// column (all ones for the unmasked graph).
    pub fn forward(
        &self,
        tape: &mut Tape,
        h: Var,
        edges: &Arc<[(usize, usize)]>,
        weights: Var,
    ) -> Result<Var> {
        let neigh = tape.edge_aggregate(edges.clone(), h, weights)?;
        let own = tape.scale_self(h, self.eps)?;
        let agg = tape.add(own, neigh)?;
        let z = self.lin1.forward(tape, agg)?;
        let z = tape.relu(z);
        self.lin2.forward(tape, z)
    }
}

/// Four GIN layers and a linear classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub layers: Vec<GinLayerParams>,
    pub head: Linear,
}

#[derive(Debug, Clone)]
pub struct BackboneVars {
    pub layers: Vec<GinLayerVars>,
    pub head: LinearVars,
}

impl BackboneParams {
    pub fn init<R: rand::Rng>(rng: &mut R, input: usize, num_classes: usize) -> Self {
        Self::init_with(rng, input, HIDDEN, NUM_LAYERS, num_classes)
    }

    pub fn init_with<R: rand::Rng>(
        rng: &mut R,
        input: usize,
        hidden: usize,
        num_layers: usize,
        num_classes: usize,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| GinLayerParams::init(rng, if l == 0 { input } else { hidden }, hidden))
            .collect();
        Self {
            layers,
            head: Linear::init(rng, hidden, num_classes),
        }
    }

    pub fn zeros(input: usize, num_classes: usize) -> Self {
        Self {
            layers: (0..NUM_LAYERS)
                .map(|l| GinLayerParams::zeros(if l == 0 { input } else { HIDDEN }, HIDDEN))
                .collect(),
            head: Linear::zeros(HIDDEN, num_classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.head.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn bind(&self, b: &mut Binder<'_>) -> BackboneVars {
        BackboneVars {
            layers: self.layers.iter().map(|l| l.bind(b)).collect(),
            head: self.head.bind(b),
        }
    }
}

impl Module for BackboneParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Tape handles produced by a backbone forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BackboneOutput {
    pub node_embeddings: Var,
    pub graph_embeddings: Var,
    pub logits: Var,
}

impl BackboneVars {
    /// Node states after all layers (each followed by ReLU).
    pub fn encode(
        &self,
        tape: &mut Tape,
        x: Var,
        edges: &Arc<[(usize, usize)]>,
        weights: Var,
    ) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            let z = layer.forward(tape, h, edges, weights)?;
            h = tape.relu(z);
        }
        Ok(h)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        weights: Var,
    ) -> Result<BackboneOutput> {
        let x = tape.constant(batch.features.clone());
        let z = self.encode(tape, x, &batch.edges, weights)?;
        let pooled = tape.spmm(batch.pool.clone(), z)?;
        let logits = self.head.forward(tape, pooled)?;
        Ok(BackboneOutput {
            node_embeddings: z,
            graph_embeddings: pooled,
            logits,
        })
    }
}

/// Block-diagonal union of several graphs.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub features: Matrix,
    pub edges: Arc<[(usize, usize)]>,
    /// `B×N` sum-pooling operator.
    pub pool: Arc<SparseMatrix>,
    pub node_offsets: Vec<usize>,
    pub edge_offsets: Vec<usize>,
    pub labels: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        let d = graphs
            .first()
            .map(|g| g.feature_dim())
            .ok_or_else(|| Error::Data("empty batch".into()))?;
        let total_nodes: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let mut features = Array2::zeros((total_nodes, d));
        let mut edges = Vec::new();
        let mut pool = Vec::with_capacity(total_nodes);
        let mut node_offsets = Vec::with_capacity(graphs.len() + 1);
        let mut edge_offsets = Vec::with_capacity(graphs.len() + 1);
        let mut off = 0;
        for (b, g) in graphs.iter().enumerate() {
            if g.feature_dim() != d {
                return Err(Error::dim(format!(
                    "feature width {} in a batch of width {d}",
                    g.feature_dim()
                )));
            }
            node_offsets.push(off);
            edge_offsets.push(edges.len());
            features
                .slice_mut(ndarray::s![off..off + g.num_nodes(), ..])
                .assign(g.features());
            edges.extend(g.edges().iter().map(|&(i, j)| (i + off, j + off)));
            pool.extend((off..off + g.num_nodes()).map(|v| (b, v, 1.0)));
            off += g.num_nodes();
        }
        node_offsets.push(off);
        edge_offsets.push(edges.len());
        Ok(Self {
            features,
            edges: edges.into(),
            pool: Arc::new(SparseMatrix::new(graphs.len(), total_nodes, pool)?),
            node_offsets,
            edge_offsets,
            labels: graphs.iter().map(|g| g.label()).collect(),
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.labels.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn full_weights(&self) -> Matrix {
        Array2::ones((self.edges.len(), 1))
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }
}

fn mask_weights(g: &Graph, mask: Option<&EdgeMask>) -> Result<Matrix> {
    match mask {
        None => Ok(Array2::ones((g.num_edges(), 1))),
        Some(m) if m.len() != g.num_edges() => Err(Error::dim(format!(
            "mask of length {} for a graph with {} edges",
            m.len(),
            g.num_edges()
        ))),
        Some(m) => Ok(Array2::from_shape_vec((m.len(), 1), m.weights()).expect("column")),
    }
}

/// Single GIN layer on one graph, optionally with masked edges.
pub fn gin_layer(
    h: &Matrix,
    g: &Graph,
    mask: Option<&EdgeMask>,
    p: &GinLayerParams,
) -> Result<Matrix> {
    if h.nrows() != g.num_nodes() {
        return Err(Error::dim(format!(
            "{} state rows for {} nodes",
            h.nrows(),
            g.num_nodes()
        )));
    }
    let w = mask_weights(g, mask)?;
    let mut tape = Tape::new();
    let vars = p.bind(&mut Binder::new(&mut tape, false));
    let hv = tape.constant(h.clone());
    let wv = tape.constant(w);
    let edges: Arc<[(usize, usize)]> = g.edges().into();
    let out = vars.forward(&mut tape, hv, &edges, wv)?;
    Ok(tape.value(out).clone())
}

/// Values of a single-graph forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub node_embeddings: Matrix,
    /// `1×hidden`.
    pub graph_embedding: Matrix,
    /// `1×c`.
    pub logits: Matrix,
}

pub fn backbone_forward(
    g: &Graph,
    mask: Option<&EdgeMask>,
    p: &BackboneParams,
) -> Result<ForwardResult> {
    if g.feature_dim() != p.input_dim() {
        return Err(Error::dim(format!(
            "feature width {} but backbone expects {}",
            g.feature_dim(),
            p.input_dim()
        )));
    }
    let w = mask_weights(g, mask)?;
    let batch = GraphBatch::new(&[g])?;
    let mut tape = Tape::new();
    let vars = p.bind(&mut Binder::new(&mut tape, false));
    let wv = tape.constant(w);
    let out = vars.forward(&mut tape, &batch, wv)?;
    Ok(ForwardResult {
        node_embeddings: tape.value(out.node_embeddings).clone(),
        graph_embedding: tape.value(out.graph_embeddings).clone(),
        logits: tape.value(out.logits).clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probs: Vec<f64>,
}

/// Argmax with ties broken toward the lower index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn prediction_from_logits(logits: &[f64]) -> Prediction {
    let m = Array2::from_shape_vec((1, logits.len()), logits.to_vec()).expect("row");
    let probs = softmax_rows(&m).row(0).to_vec();
    Prediction {
        label: argmax(logits),
        probs,
    }
}

pub fn predict(g: &Graph, p: &BackboneParams) -> Result<Prediction> {
    let out = backbone_forward(g, None, p)?;
    Ok(prediction_from_logits(
        out.logits.row(0).as_slice().expect("contiguous"),
    ))
}

/// Hyperparameters of a supervised training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 350,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// One line of a training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub loss: f64,
}

/// Predicted labels for `graphs`, evaluated in batches.
pub fn predict_batch(
    p: &BackboneParams,
    graphs: &[&Graph],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(batch_size.max(1)) {
        let batch = GraphBatch::new(chunk)?;
        let mut tape = Tape::new();
        let vars = p.bind(&mut Binder::new(&mut tape, false));
        let w = tape.constant(batch.full_weights());
        let o = vars.forward(&mut tape, &batch, w)?;
        let logits = tape.value(o.logits);
        out.extend(
            logits
                .rows()
                .into_iter()
                .map(|r| argmax(r.as_slice().expect("row"))),
        );
    }
    Ok(out)
}

pub fn accuracy(pred: &[usize], graphs: &[&Graph]) -> f64 {
    if graphs.is_empty() {
        return 0.0;
    }
    let hits = pred
        .iter()
        .zip(graphs)
        .filter(|(&p, g)| p == g.label())
        .count();
    hits as f64 / graphs.len() as f64
}

/// Minibatch cross-entropy training of `params` with Adam.
///
/// `eval` graphs are only scored (never trained on) after every epoch.
pub fn train_backbone_from(
    mut params: BackboneParams,
    train: &[&Graph],
    eval: &[&Graph],
    cfg: &TrainConfig,
) -> Result<(BackboneParams, Vec<EpochRecord>)> {
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut opt = Adam::new(&params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let graphs: Vec<&Graph> = chunk.iter().map(|&i| train[i]).collect();
            let batch = GraphBatch::new(&graphs)?;
            let mut tape = Tape::new();
            let mut binder = Binder::new(&mut tape, true);
            let vars = params.bind(&mut binder);
            let bound = binder.finish();
            let w = tape.constant(batch.full_weights());
            let out = vars.forward(&mut tape, &batch, w)?;
            let loss = tape.softmax_cross_entropy(out.logits, &batch.labels)?;
            let lv = tape.scalar(loss);
            if !lv.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: format!("non-finite loss {lv}"),
                });
            }
            loss_sum += lv * graphs.len() as f64;
            hits += tape
                .value(out.logits)
                .rows()
                .into_iter()
                .zip(&batch.labels)
                .filter(|(r, &y)| argmax(r.as_slice().expect("row")) == y)
                .count();
            let grads = tape.backward(loss)?;
            let grads = collect_grads(&tape, &grads, &bound);
            opt.step(&mut params, &grads).map_err(|e| Error::Training {
                epoch,
                msg: e.to_string(),
            })?;
        }
        let val_acc = if eval.is_empty() {
            None
        } else {
            Some(accuracy(
                &predict_batch(&params, eval, cfg.batch_size)?,
                eval,
            ))
        };
        history.push(EpochRecord {
            epoch,
            train_acc: hits as f64 / train.len() as f64,
            val_acc,
            loss: loss_sum / train.len() as f64,
        });
    }
    Ok((params, history))
}

/// Trains a freshly initialized backbone (seeded by `cfg.seed`).
pub fn train_backbone(
    train: &[&Graph],
    eval: &[&Graph],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(BackboneParams, Vec<EpochRecord>)> {
    let d = train
        .first()
        .map(|g| g.feature_dim())
        .ok_or_else(|| Error::Data("empty training set".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let init = BackboneParams::init(&mut rng, d, num_classes);
    train_backbone_from(init, train, eval, cfg)
}
