use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Selection of edges (and, for node deletion, nodes) of a base graph.
///
/// `bits[k]` says whether undirected edge `k` of the base graph survives.
/// Node deletion keeps the node slot: its incident edges are cleared and its
/// index is listed in `deleted_nodes` so the encoder zeroes its feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    pub bits: Vec<bool>,
    /// Soft weights the mask was binarized from, when learned.
    pub soft: Option<Vec<f64>>,
    pub threshold_used: Option<f64>,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub deleted_nodes: Vec<usize>,
}

impl EdgeMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self {
            bits,
            soft: None,
            threshold_used: None,
            budget: None,
            seed: None,
            deleted_nodes: Vec::new(),
        }
    }

    pub fn full(num_edges: usize) -> Self {
        Self::from_bits(vec![true; num_edges])
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }

    /// True when every selected edge of `self` is also selected in `other`.
    pub fn is_subset_of(&self, other: &EdgeMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyTag {
    #[serde(rename = "ED")]
    EdgeDeleted,
    #[serde(rename = "ND")]
    NodeDeleted,
    #[serde(rename = "EXPLAIN_NOISE")]
    ExplainNoise,
    #[serde(rename = "EXPLAIN_TOPK")]
    ExplainTopK,
    /// Singleton bag holding the unmodified graph.
    #[serde(rename = "FULL")]
    Full,
}

/// Ordered collection of subgraphs of one base graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphBag {
    pub graph_id: usize,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub policy: PolicyTag,
    pub masks: Vec<EdgeMask>,
}

impl SubgraphBag {
    pub fn new(
        graph_id: usize,
        base: &Graph,
        policy: PolicyTag,
        masks: Vec<EdgeMask>,
    ) -> Result<Self> {
        let bag = Self {
            graph_id,
            num_nodes: base.num_nodes(),
            num_edges: base.num_edges(),
            policy,
            masks,
        };
        bag.validate()?;
        Ok(bag)
    }

    /// Singleton bag containing the base graph itself.
    pub fn full(graph_id: usize, base: &Graph) -> Self {
        Self {
            graph_id,
            num_nodes: base.num_nodes(),
            num_edges: base.num_edges(),
            policy: PolicyTag::Full,
            masks: vec![EdgeMask::full(base.num_edges())],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.masks.is_empty() {
            return Err(Error::Data(format!(
                "empty bag for graph {}",
                self.graph_id
            )));
        }
        for m in &self.masks {
            if m.len() != self.num_edges {
                return Err(Error::dim(format!(
                    "mask of length {} for base graph with {} edges",
                    m.len(),
                    self.num_edges
                )));
            }
            if let Some(&v) = m.deleted_nodes.iter().find(|&&v| v >= self.num_nodes) {
                return Err(Error::dim(format!(
                    "deleted node {v} outside base graph of {} nodes",
                    self.num_nodes
                )));
            }
        }
        Ok(())
    }

    /// Checks that `g` is the graph this bag was built on (by shape).
    pub fn check_base(&self, g: &Graph) -> Result<()> {
        if g.num_nodes() != self.num_nodes || g.num_edges() != self.num_edges {
            return Err(Error::Data(format!(
                "bag for graph {} ({} nodes, {} edges) applied to a graph with {} nodes, {} edges",
                self.graph_id,
                self.num_nodes,
                self.num_edges,
                g.num_nodes(),
                g.num_edges()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Mean number of surviving edges per subgraph.
    pub fn mean_edges(&self) -> f64 {
        self.masks.iter().map(EdgeMask::count).sum::<usize>() as f64 / self.masks.len() as f64
    }

    pub fn to_record(&self) -> BagRecord {
        BagRecord {
            graph_id: self.graph_id,
            num_nodes: self.num_nodes,
            num_edges: self.num_edges,
            policy: self.policy,
            masks: self
                .masks
                .iter()
                .map(|m| MaskRecord {
                    bits: encode_bits(&m.bits),
                    k: m.budget,
                    seed: m.seed,
                    deleted_nodes: m.deleted_nodes.clone(),
                })
                .collect(),
        }
    }

    pub fn from_record(r: &BagRecord) -> Result<Self> {
        let masks = r
            .masks
            .iter()
            .map(|m| {
                let mut mask = EdgeMask::from_bits(decode_bits(&m.bits, r.num_edges)?);
                mask.budget = m.k;
                mask.seed = m.seed;
                mask.deleted_nodes = m.deleted_nodes.clone();
                Ok(mask)
            })
            .collect::<Result<Vec<_>>>()?;
        let bag = Self {
            graph_id: r.graph_id,
            num_nodes: r.num_nodes,
            num_edges: r.num_edges,
            policy: r.policy,
            masks,
        };
        bag.validate()?;
        Ok(bag)
    }
}

/// JSON form of a bag: masks as base64 bitsets (bit `k` of byte `k / 8`,
/// least significant first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagRecord {
    pub graph_id: usize,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub policy: PolicyTag,
    pub masks: Vec<MaskRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub bits: String,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deleted_nodes: Vec<usize>,
}

fn encode_bits(bits: &[bool]) -> String {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (k, &b) in bits.iter().enumerate() {
        if b {
            bytes[k / 8] |= 1 << (k % 8);
        }
    }
    B64.encode(bytes)
}

fn decode_bits(s: &str, len: usize) -> Result<Vec<bool>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Serialization(format!("bad mask bitset: {e}")))?;
    if bytes.len() != len.div_ceil(8) {
        return Err(Error::Serialization(format!(
            "bitset of {} bytes for {len} edges",
            bytes.len()
        )));
    }
    Ok((0..len).map(|k| bytes[k / 8] >> (k % 8) & 1 == 1).collect())
}

/// Edge-deleted policy: one subgraph per edge, each missing exactly that edge.
pub fn policy_edge_deleted(graph_id: usize, g: &Graph) -> Result<SubgraphBag> {
    let m = g.num_edges();
    if m == 0 {
        return Err(Error::Policy(format!(
            "edge-deleted policy needs at least one edge (graph {graph_id})"
        )));
    }
    let masks = (0..m)
        .map(|k| {
            let mut bits = vec![true; m];
            bits[k] = false;
            EdgeMask::from_bits(bits)
        })
        .collect();
    SubgraphBag::new(graph_id, g, PolicyTag::EdgeDeleted, masks)
}

/// Node-deleted policy: one subgraph per node, with its incident edges
/// cleared and its feature row flagged for zeroing.
pub fn policy_node_deleted(graph_id: usize, g: &Graph) -> Result<SubgraphBag> {
    if g.num_nodes() == 0 {
        return Err(Error::Policy(format!(
            "node-deleted policy needs at least one node (graph {graph_id})"
        )));
    }
    let masks = (0..g.num_nodes())
        .map(|v| {
            let bits = g.edges().iter().map(|&(i, j)| i != v && j != v).collect();
            let mut mask = EdgeMask::from_bits(bits);
            mask.deleted_nodes = vec![v];
            mask
        })
        .collect();
    SubgraphBag::new(graph_id, g, PolicyTag::NodeDeleted, masks)
}

/// Uniform sample without replacement of `⌈fraction · m⌉` subgraphs,
/// keeping their original order.
pub fn sample_bag(bag: &SubgraphBag, fraction: f64, seed: u64) -> Result<SubgraphBag> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::arg(format!("bag fraction {fraction} not in (0, 1]")));
    }
    bag.validate()?;
    let m = bag.len();
    let k = sample_size(m, fraction);
    if k == m {
        return Ok(bag.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, m, k).into_vec();
    idx.sort_unstable();
    Ok(SubgraphBag {
        masks: idx.into_iter().map(|i| bag.masks[i].clone()).collect(),
        ..bag.clone()
    })
}

/// `⌈fraction · m⌉`, robust to representation error in `fraction`.
pub(crate) fn sample_size(m: usize, fraction: f64) -> usize {
    (((fraction * m as f64) - 1e-9).ceil() as usize).clamp(1, m)
}
