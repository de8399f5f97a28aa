//! DSS-GNN over bags of subgraphs.
//!
//! Every layer updates each subgraph's node states with its own GIN layer
//! (`L1`) plus a second GIN layer (`L2`) applied to the summed states of all
//! subgraphs on the multiplicity-weighted aggregate adjacency:
//!
//! ```text
//! H_i ← ReLU( L1(H_i, G_i) + L2(Σ_j H_j / m, Σ_j G_j / m) )
//! ```
//!
//! The shared branch sees the bag mean: both the summed states and the edge
//! multiplicities are divided by the bag size `m`, which keeps activations
//! bounded when bags hold dozens of subgraphs.
//!
//! Subgraph embeddings are sum-pooled and combined with a DeepSets module
//! `ρ(Σ_i φ(h_i))` before the classification head.
//!
//! A batch stacks all subgraph copies of all graphs block-diagonally. Two
//! sparse operators move states between the stacked copies and the base
//! graphs: `to_base` averages the copies of each node and `from_base` broadcasts
//! base rows back to every copy.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{argmax, BackboneParams, BackboneVars, GinLayerParams, GinLayerVars};
use crate::error::{Error, Result};
use crate::graph::{sample_bag, Graph, SubgraphBag};
use crate::seed::derive_seed;
use crate::tensor::{
    collect_grads, join, softmax_rows, Adam, Binder, Linear, LinearVars, Matrix, Module,
    SparseMatrix, Tape, Var,
};

/// DeepSets pair `ρ(Σ φ(h))`, each a linear map followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct SetAggregator {
    pub phi: Linear,
    pub rho: Linear,
}

impl Module for SetAggregator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        self.phi.visit(&join(prefix, "phi"), f);
        self.rho.visit(&join(prefix, "rho"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.phi.visit_mut(&join(prefix, "phi"), f);
        self.rho.visit_mut(&join(prefix, "rho"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DssParams {
    /// Per-subgraph encoder, initialized from the step-1 backbone. Its head
    /// is carried along but unused.
    pub l1: BackboneParams,
    /// Information-sharing layers, one per `l1` layer.
    pub l2: Vec<GinLayerParams>,
    pub set_agg: SetAggregator,
    pub head: Linear,
}

#[derive(Debug, Clone)]
pub struct DssVars {
    l1: BackboneVars,
    l2: Vec<GinLayerVars>,
    phi: LinearVars,
    rho: LinearVars,
    head: LinearVars,
}

impl DssParams {
    /// `l1` copied from `backbone`; everything else freshly initialized.
    pub fn from_backbone<R: Rng>(rng: &mut R, backbone: &BackboneParams) -> Self {
        let h = backbone.hidden();
        let l2 = backbone
            .layers
            .iter()
            .map(|l| GinLayerParams::init(rng, l.input_dim(), h))
            .collect();
        Self {
            l1: backbone.clone(),
            l2,
            set_agg: SetAggregator {
                phi: Linear::init(rng, h, h),
                rho: Linear::init(rng, h, h),
            },
            head: Linear::init(rng, h, backbone.num_classes()),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.l1.layers.len() != self.l2.len() {
            return Err(Error::dim(format!(
                "{} L1 layers but {} L2 layers",
                self.l1.layers.len(),
                self.l2.len()
            )));
        }
        for (a, b) in self.l1.layers.iter().zip(&self.l2) {
            if a.input_dim() != b.input_dim() {
                return Err(Error::dim("L1 and L2 layer widths differ"));
            }
        }
        Ok(())
    }

    pub fn bind(&self, b: &mut Binder<'_>) -> DssVars {
        DssVars {
            l1: self.l1.bind(b),
            l2: self.l2.iter().map(|l| l.bind(b)).collect(),
            phi: self.set_agg.phi.bind(b),
            rho: self.set_agg.rho.bind(b),
            head: self.head.bind(b),
        }
    }
}

impl Module for DssParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        self.l1.visit(&join(prefix, "L1"), f);
        for (i, l) in self.l2.iter().enumerate() {
            l.visit(&join(&join(prefix, "L2"), &format!("layer{i}")), f);
        }
        self.set_agg.visit(&join(prefix, "set"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.l1.visit_mut(&join(prefix, "L1"), f);
        for (i, l) in self.l2.iter_mut().enumerate() {
            l.visit_mut(&join(&join(prefix, "L2"), &format!("layer{i}")), f);
        }
        self.set_agg.visit_mut(&join(prefix, "set"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// `Σ_j G_j` for one bag: summed subgraph features and edge multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateView {
    pub features: Matrix,
    pub adjacency: SparseMatrix,
}

/// Node-feature matrix of subgraph `j` (deleted nodes have zero rows).
fn subgraph_features(g: &Graph, bag: &SubgraphBag, j: usize) -> Matrix {
    let mut x = g.features().clone();
    for &v in &bag.masks[j].deleted_nodes {
        x.row_mut(v).fill(0.0);
    }
    x
}

fn edge_multiplicities(bag: &SubgraphBag) -> Vec<f64> {
    let mut w = vec![0.0; bag.num_edges];
    for m in &bag.masks {
        for (k, &b) in m.bits.iter().enumerate() {
            if b {
                w[k] += 1.0;
            }
        }
    }
    w
}

pub fn aggregate_bag(bag: &SubgraphBag, g: &Graph) -> Result<AggregateView> {
    if bag.is_empty() {
        return Err(Error::Data(format!("empty bag for graph {}", bag.graph_id)));
    }
    bag.check_base(g)?;
    let mut features = Array2::zeros(g.features().raw_dim());
    for j in 0..bag.len() {
        features += &subgraph_features(g, bag, j);
    }
    let mult = edge_multiplicities(bag);
    let adjacency = SparseMatrix::from_undirected(g.num_nodes(), g.edges(), &mult)?;
    Ok(AggregateView {
        features,
        adjacency,
    })
}

/// Stacked subgraph copies for a set of (graph, bag) pairs.
#[derive(Debug, Clone)]
pub struct BagBatch {
    /// Features of every subgraph copy, stacked.
    pub features: Matrix,
    /// Kept edges of every copy, in stacked node indices.
    pub sub_edges: Arc<[(usize, usize)]>,
    /// Base edges of every graph, in base node indices.
    pub base_edges: Arc<[(usize, usize)]>,
    /// Multiplicity of each base edge across its bag, divided by the bag size.
    pub base_weights: Matrix,
    /// `N_base×N_sub`, averages the copies of each node.
    pub to_base: Arc<SparseMatrix>,
    /// `N_sub×N_base`, broadcasts base rows to every copy.
    pub from_base: Arc<SparseMatrix>,
    /// `S×N_sub`, sum-pools each copy; skips deleted nodes.
    pub sub_pool: Arc<SparseMatrix>,
    /// `B×S`, sums the subgraph embeddings of each graph.
    pub set_pool: Arc<SparseMatrix>,
    /// Zeroes deleted nodes after every layer, when any exist.
    pub keep: Option<Arc<SparseMatrix>>,
    pub labels: Vec<usize>,
}

impl BagBatch {
    pub fn new(items: &[(&Graph, &SubgraphBag)]) -> Result<Self> {
        let d = items
            .first()
            .map(|(g, _)| g.feature_dim())
            .ok_or_else(|| Error::Data("empty batch".into()))?;
        let n_sub: usize = items.iter().map(|(g, b)| g.num_nodes() * b.len()).sum();
        let n_base: usize = items.iter().map(|(g, _)| g.num_nodes()).sum();
        let n_sets: usize = items.iter().map(|(_, b)| b.len()).sum();

        let mut features = Array2::zeros((n_sub, d));
        let mut sub_edges = Vec::new();
        let mut base_edges = Vec::new();
        let mut base_weights = Vec::new();
        let mut to_base = Vec::with_capacity(n_sub);
        let mut from_base = Vec::with_capacity(n_sub);
        let mut sub_pool = Vec::with_capacity(n_sub);
        let mut set_pool = Vec::with_capacity(n_sets);
        let mut keep = Vec::with_capacity(n_sub);
        let mut any_deleted = false;
        let (mut sub_off, mut base_off, mut set_idx) = (0, 0, 0);
        for (b, (g, bag)) in items.iter().enumerate() {
            if bag.is_empty() {
                return Err(Error::Data(format!("empty bag for graph {}", bag.graph_id)));
            }
            bag.check_base(g)?;
            if g.feature_dim() != d {
                return Err(Error::dim(format!(
                    "feature width {} in a batch of width {d}",
                    g.feature_dim()
                )));
            }
            let n = g.num_nodes();
            let inv_m = 1.0 / bag.len() as f64;
            for (k, w) in edge_multiplicities(bag).into_iter().enumerate() {
                if w > 0.0 {
                    let (i, j) = g.edges()[k];
                    base_edges.push((i + base_off, j + base_off));
                    base_weights.push(w * inv_m);
                }
            }
            for (s, mask) in bag.masks.iter().enumerate() {
                features
                    .slice_mut(ndarray::s![sub_off..sub_off + n, ..])
                    .assign(&subgraph_features(g, bag, s));
                sub_edges.extend(
                    g.edges()
                        .iter()
                        .zip(&mask.bits)
                        .filter(|(_, &bit)| bit)
                        .map(|(&(i, j), _)| (i + sub_off, j + sub_off)),
                );
                let mut alive = vec![true; n];
                for &v in &mask.deleted_nodes {
                    alive[v] = false;
                    any_deleted = true;
                }
                for (v, &a) in alive.iter().enumerate() {
                    to_base.push((base_off + v, sub_off + v, inv_m));
                    from_base.push((sub_off + v, base_off + v, 1.0));
                    if a {
                        sub_pool.push((set_idx, sub_off + v, 1.0));
                        keep.push((sub_off + v, sub_off + v, 1.0));
                    }
                }
                set_pool.push((b, set_idx, 1.0));
                set_idx += 1;
                sub_off += n;
            }
            base_off += n;
        }
        let to_base = SparseMatrix::new(n_base, n_sub, to_base)?;
        let from_base = SparseMatrix::new(n_sub, n_base, from_base)?;
        let nw = base_weights.len();
        Ok(Self {
            features,
            sub_edges: sub_edges.into(),
            base_edges: base_edges.into(),
            base_weights: Array2::from_shape_vec((nw, 1), base_weights).expect("column"),
            to_base: Arc::new(to_base),
            from_base: Arc::new(from_base),
            sub_pool: Arc::new(SparseMatrix::new(n_sets, n_sub, sub_pool)?),
            set_pool: Arc::new(SparseMatrix::new(items.len(), n_sets, set_pool)?),
            keep: if any_deleted {
                Some(Arc::new(SparseMatrix::new(n_sub, n_sub, keep)?))
            } else {
                None
            },
            labels: items.iter().map(|(g, _)| g.label()).collect(),
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.labels.len()
    }
}

/// Tape handles of a DSS forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DssOutput {
    /// `S×h`, one row per subgraph copy.
    pub subgraph_embeddings: Var,
    /// `B×h`, after the set module.
    pub graph_embeddings: Var,
    pub logits: Var,
}

impl DssVars {
    /// One DSS layer on stacked states. Returns the post-ReLU states.
    pub fn layer(&self, tape: &mut Tape, l: usize, h: Var, batch: &BagBatch) -> Result<Var> {
        let ones = tape.constant(Array2::ones((batch.sub_edges.len(), 1)));
        let own = self.l1.layers[l].forward(tape, h, &batch.sub_edges, ones)?;
        let summed = tape.spmm(batch.to_base.clone(), h)?;
        let w = tape.constant(batch.base_weights.clone());
        let shared = self.l2[l].forward(tape, summed, &batch.base_edges, w)?;
        let shared = tape.spmm(batch.from_base.clone(), shared)?;
        let z = tape.add(own, shared)?;
        let z = tape.relu(z);
        match &batch.keep {
            Some(k) => tape.spmm(k.clone(), z),
            None => Ok(z),
        }
    }

    pub fn forward(&self, tape: &mut Tape, batch: &BagBatch) -> Result<DssOutput> {
        let mut h = tape.constant(batch.features.clone());
        for l in 0..self.l2.len() {
            h = self.layer(tape, l, h, batch)?;
        }
        let sub = tape.spmm(batch.sub_pool.clone(), h)?;
        let phi = self.phi.forward(tape, sub)?;
        let phi = tape.relu(phi);
        let pooled = tape.spmm(batch.set_pool.clone(), phi)?;
        let rho = self.rho.forward(tape, pooled)?;
        let rho = tape.relu(rho);
        let logits = self.head.forward(tape, rho)?;
        Ok(DssOutput {
            subgraph_embeddings: sub,
            graph_embeddings: rho,
            logits,
        })
    }
}

/// Values of a single-graph DSS forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DssResult {
    pub subgraph_embeddings: Matrix,
    pub graph_embedding: Matrix,
    pub logits: Matrix,
}

pub fn dss_forward(g: &Graph, bag: &SubgraphBag, p: &DssParams) -> Result<DssResult> {
    p.validate()?;
    let batch = BagBatch::new(&[(g, bag)])?;
    let mut tape = Tape::new();
    let vars = p.bind(&mut Binder::new(&mut tape, false));
    let out = vars.forward(&mut tape, &batch)?;
    Ok(DssResult {
        subgraph_embeddings: tape.value(out.subgraph_embeddings).clone(),
        graph_embedding: tape.value(out.graph_embeddings).clone(),
        logits: tape.value(out.logits).clone(),
    })
}

/// Node states of every subgraph after `layers` DSS layers, one matrix per
/// subgraph in bag order.
pub fn dss_node_states(
    g: &Graph,
    bag: &SubgraphBag,
    p: &DssParams,
    layers: usize,
) -> Result<Vec<Matrix>> {
    p.validate()?;
    let batch = BagBatch::new(&[(g, bag)])?;
    let mut tape = Tape::new();
    let vars = p.bind(&mut Binder::new(&mut tape, false));
    let mut h = tape.constant(batch.features.clone());
    for l in 0..layers.min(p.l2.len()) {
        h = vars.layer(&mut tape, l, h, &batch)?;
    }
    let n = g.num_nodes();
    let hv = tape.value(h);
    Ok((0..bag.len())
        .map(|j| hv.slice(ndarray::s![j * n..(j + 1) * n, ..]).to_owned())
        .collect())
}

pub fn dss_predict(
    p: &DssParams,
    items: &[(&Graph, &SubgraphBag)],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch_size.max(1)) {
        let batch = BagBatch::new(chunk)?;
        let mut tape = Tape::new();
        let vars = p.bind(&mut Binder::new(&mut tape, false));
        let o = vars.forward(&mut tape, &batch)?;
        let probs = softmax_rows(tape.value(o.logits));
        out.extend(
            probs
                .rows()
                .into_iter()
                .map(|r| argmax(r.as_slice().expect("row"))),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of each bag resampled every epoch; 1.0 keeps full bags.
    pub bag_fraction: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            bag_fraction: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

/// Sub-bag of `bag` for `epoch` (epoch 0 is used for evaluation).
fn epoch_bag(bag: &SubgraphBag, fraction: f64, seed: u64, epoch: usize) -> Result<SubgraphBag> {
    if fraction >= 1.0 {
        return Ok(bag.clone());
    }
    sample_bag(
        bag,
        fraction,
        derive_seed(seed, &[epoch as u64, bag.graph_id as u64]),
    )
}

/// Fine-tunes a DSS model whose `l1` starts from `init`. `eval` is scored
/// after every epoch.
pub fn finetune_dss(
    train: &[(&Graph, &SubgraphBag)],
    eval: &[(&Graph, &SubgraphBag)],
    init: &BackboneParams,
    cfg: &FinetuneConfig,
) -> Result<(DssParams, Vec<FinetuneEpoch>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let params = DssParams::from_backbone(&mut rng, init);
    finetune_dss_from(params, train, eval, cfg)
}

pub fn finetune_dss_from(
    mut params: DssParams,
    train: &[(&Graph, &SubgraphBag)],
    eval: &[(&Graph, &SubgraphBag)],
    cfg: &FinetuneConfig,
) -> Result<(DssParams, Vec<FinetuneEpoch>)> {
    params.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training graphs".into()));
    }
    if !(cfg.bag_fraction > 0.0 && cfg.bag_fraction <= 1.0) {
        return Err(Error::arg(format!(
            "bag fraction {} outside (0, 1]",
            cfg.bag_fraction
        )));
    }
    for (_, b) in train.iter().chain(eval) {
        if b.is_empty() {
            return Err(Error::Data(format!("empty bag for graph {}", b.graph_id)));
        }
    }
    let eval_bags: Vec<SubgraphBag> = eval
        .iter()
        .map(|(_, b)| epoch_bag(b, cfg.bag_fraction, cfg.seed, 0))
        .collect::<Result<_>>()?;
    let eval_items: Vec<(&Graph, &SubgraphBag)> =
        eval.iter().map(|(g, _)| *g).zip(&eval_bags).collect();

    let mut opt = Adam::new(&params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let bags: Vec<SubgraphBag> = chunk
                .iter()
                .map(|&i| epoch_bag(train[i].1, cfg.bag_fraction, cfg.seed, epoch))
                .collect::<Result<_>>()?;
            let items: Vec<(&Graph, &SubgraphBag)> =
                chunk.iter().map(|&i| train[i].0).zip(&bags).collect();
            let batch = BagBatch::new(&items)?;
            let mut tape = Tape::new();
            let mut binder = Binder::new(&mut tape, true);
            let vars = params.bind(&mut binder);
            let bound = binder.finish();
            let out = vars.forward(&mut tape, &batch)?;
            let loss = tape.softmax_cross_entropy(out.logits, &batch.labels)?;
            let lv = tape.scalar(loss);
            if !lv.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: format!("non-finite loss {lv}"),
                });
            }
            loss_sum += lv * chunk.len() as f64;
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
        let eval_acc = if eval_items.is_empty() {
            None
        } else {
            let pred = dss_predict(&params, &eval_items, cfg.batch_size)?;
            let ok = pred
                .iter()
                .zip(&eval_items)
                .filter(|(&p, (g, _))| p == g.label())
                .count();
            Some(ok as f64 / eval_items.len() as f64)
        };
        history.push(FinetuneEpoch {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            eval_acc,
        });
    }
    Ok((params, history))
}
