//! Graphs, datasets, ingestion, synthesis and baseline subgraph policies.

mod ba2motifs;
mod bag;
mod features;
mod tud;

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SparseMatrix;

pub use ba2motifs::{generate_ba2motifs, write_motif_edges, BA_BASE_NODES, MOTIF_NODES};
pub(crate) use bag::sample_size;
pub use bag::{
    policy_edge_deleted, policy_node_deleted, sample_bag, BagRecord, EdgeMask, MaskRecord,
    PolicyTag, SubgraphBag,
};
pub use features::degree_features;
pub use tud::{load_tud_dataset, write_tud_dataset};

/// Undirected, unweighted graph with node features and a class label.
///
/// Edges are stored once, as `(i, j)` with `i < j`, sorted ascending. Edge
/// masks and explanation weights are indexed by position in this list.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Array2<f64>,
    label: usize,
    node_labels: Option<Vec<usize>>,
    motif_edges: Option<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list in any orientation.
    ///
    /// Self-loops, duplicate undirected edges and out-of-range endpoints are
    /// rejected; the feature matrix must have one row per node.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Array2<f64>,
        label: usize,
    ) -> Result<Self> {
        if features.nrows() != num_nodes {
            return Err(Error::dim(format!(
                "{} feature rows for {num_nodes} nodes",
                features.nrows()
            )));
        }
        let mut seen = HashSet::new();
        let mut canon = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::Data(format!("self-loop on node {a}")));
            }
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Data(format!(
                    "edge ({a}, {b}) out of range for {num_nodes} nodes"
                )));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::Data(format!("duplicate edge ({}, {})", e.0, e.1)));
            }
            canon.push(e);
        }
        canon.sort_unstable();
        Ok(Self {
            num_nodes,
            edges: canon,
            features,
            label,
            node_labels: None,
            motif_edges: None,
        })
    }

    /// Graph with a constant scalar feature on every node.
    pub fn unlabeled(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        label: usize,
    ) -> Result<Self> {
        Self::new(num_nodes, edges, Array2::ones((num_nodes, 1)), label)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    /// Edge indices of the ground-truth explanation, when known.
    pub fn motif_edges(&self) -> Option<&[usize]> {
        self.motif_edges.as_deref()
    }

    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.num_nodes {
            return Err(Error::dim(format!(
                "{} feature rows for {} nodes",
                features.nrows(),
                self.num_nodes
            )));
        }
        self.features = features;
        Ok(self)
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(Error::dim(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.num_nodes
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    /// Records ground-truth edges given as node pairs.
    pub fn with_motif_pairs(mut self, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut idx = pairs
            .iter()
            .map(|&(a, b)| {
                self.edge_index(a, b)
                    .ok_or_else(|| Error::Data(format!("motif edge ({a}, {b}) not in graph")))
            })
            .collect::<Result<Vec<_>>>()?;
        idx.sort_unstable();
        self.motif_edges = Some(idx);
        Ok(self)
    }

    pub fn with_motif_edges(mut self, idx: Vec<usize>) -> Result<Self> {
        if let Some(&k) = idx.iter().find(|&&k| k >= self.edges.len()) {
            return Err(Error::Data(format!("motif edge index {k} out of range")));
        }
        self.motif_edges = Some(idx);
        Ok(self)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = label;
        self
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.binary_search(&(a.min(b), a.max(b))).ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    pub fn adjacency(&self) -> SparseMatrix {
        ConnectivityOperator::Adjacency.build(self)
    }

    /// Relabels node `v` as `perm[v]`. Returns the new graph and, for every
    /// old edge index, its index in the new graph.
    pub fn permute(&self, perm: &[usize]) -> Result<(Graph, Vec<usize>)> {
        let n = self.num_nodes;
        let mut check = perm.to_vec();
        check.sort_unstable();
        if perm.len() != n || check.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(Error::arg("not a permutation of the node set"));
        }
        let mut feats = Array2::zeros(self.features.dim());
        for (v, &p) in perm.iter().enumerate() {
            feats.row_mut(p).assign(&self.features.row(v));
        }
        let mut g = Graph::new(
            n,
            self.edges.iter().map(|&(i, j)| (perm[i], perm[j])),
            feats,
            self.label,
        )?;
        let edge_map: Vec<usize> = self
            .edges
            .iter()
            .map(|&(i, j)| g.edge_index(perm[i], perm[j]).expect("permuted edge"))
            .collect();
        if let Some(nl) = &self.node_labels {
            let mut new = vec![0; n];
            for v in 0..n {
                new[perm[v]] = nl[v];
            }
            g.node_labels = Some(new);
        }
        if let Some(me) = &self.motif_edges {
            let mut m: Vec<usize> = me.iter().map(|&k| edge_map[k]).collect();
            m.sort_unstable();
            g.motif_edges = Some(m);
        }
        Ok((g, edge_map))
    }
}

/// Topology operator matching the sparsity pattern of the adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectivityOperator {
    Adjacency,
    AdjacencyPlusSelf,
    /// `(1 + ε)·I + A`, the GIN aggregation operator.
    GinEpsilon(f64),
}

impl ConnectivityOperator {
    pub fn build(&self, g: &Graph) -> SparseMatrix {
        let n = g.num_nodes();
        let mut entries = Vec::with_capacity(2 * g.num_edges() + n);
        for &(i, j) in g.edges() {
            entries.push((i, j, 1.0));
            entries.push((j, i, 1.0));
        }
        let diag = match *self {
            ConnectivityOperator::Adjacency => None,
            ConnectivityOperator::AdjacencyPlusSelf => Some(1.0),
            ConnectivityOperator::GinEpsilon(eps) => Some(1.0 + eps),
        };
        if let Some(d) = diag {
            entries.extend((0..n).map(|v| (v, v, d)));
        }
        SparseMatrix::square(n, entries).expect("graph edges are in range")
    }
}

/// How node features are derived when loading a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpec {
    /// One-hot node labels; falls back to capped degree one-hot when the
    /// dataset ships no node labels.
    NodeLabelsOnehot,
    /// One-hot of `min(degree, cap)`; `None` uses the maximum observed degree.
    DegreeOnehot(Option<usize>),
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_spec: FeatureSpec,
}

impl GraphDataset {
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<Graph>,
        num_classes: usize,
        feature_spec: FeatureSpec,
    ) -> Result<Self> {
        if let Some(g) = graphs.iter().find(|g| g.label() >= num_classes) {
            return Err(Error::Data(format!(
                "label {} outside [0, {num_classes})",
                g.label()
            )));
        }
        if let Some(first) = graphs.first() {
            let d = first.feature_dim();
            if graphs.iter().any(|g| g.feature_dim() != d) {
                return Err(Error::Data("inconsistent feature dimensionality".into()));
            }
        }
        Ok(Self {
            name: name.into(),
            graphs,
            num_classes,
            feature_spec,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(Graph::label).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<&Graph> {
        idx.iter().map(|&i| &self.graphs[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn triangle() -> Graph {
        Graph::unlabeled(3, [(0, 1), (1, 2), (2, 0)], 0).unwrap()
    }

    #[test]
    fn edges_are_canonical_and_sorted() {
        let g = Graph::unlabeled(4, [(3, 1), (2, 0), (1, 0)], 0).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 3)]);
        assert_eq!(g.edge_index(3, 1), Some(2));
    }

    #[test]
    fn invalid_edges_rejected() {
        assert!(Graph::unlabeled(3, [(1, 1)], 0).is_err());
        assert!(Graph::unlabeled(3, [(0, 1), (1, 0)], 0).is_err());
        assert!(Graph::unlabeled(3, [(0, 3)], 0).is_err());
        assert!(Graph::new(3, [], Array2::zeros((2, 1)), 0).is_err());
    }

    #[test]
    fn connectivity_operators_share_sparsity_pattern() {
        let g = triangle();
        let a = ConnectivityOperator::Adjacency.build(&g).to_dense();
        let s = ConnectivityOperator::AdjacencyPlusSelf.build(&g).to_dense();
        let e = ConnectivityOperator::GinEpsilon(0.5).build(&g).to_dense();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert_eq!((a[(i, j)], s[(i, j)], e[(i, j)]), (0.0, 1.0, 1.5));
                } else {
                    assert_eq!((a[(i, j)], s[(i, j)], e[(i, j)]), (1.0, 1.0, 1.0));
                }
            }
        }
    }

    #[test]
    fn permute_tracks_edges() {
        let g = Graph::unlabeled(4, [(0, 1), (1, 2), (2, 3)], 1).unwrap();
        let (p, map) = g.permute(&[3, 2, 1, 0]).unwrap();
        for (k, &(i, j)) in g.edges().iter().enumerate() {
            let (a, b) = p.edges()[map[k]];
            assert_eq!((a.min(b), a.max(b)), ((3 - j), (3 - i)));
        }
        assert!(g.permute(&[0, 0, 1, 2]).is_err());
    }

    #[test]
    fn dataset_rejects_out_of_range_label() {
        let g = triangle().with_label(2);
        assert!(GraphDataset::new("x", vec![g], 2, FeatureSpec::Constant).is_err());
    }
}
