//! Synthetic BA-2Motifs benchmark: a Barabási–Albert tree with an attached
//! house (class 0) or five-node cycle (class 1).

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FeatureSpec, Graph, GraphDataset};
use crate::error::{Error, Result};
use crate::io::write_json;

pub const BA_BASE_NODES: usize = 20;
pub const MOTIF_NODES: usize = 5;

const HOUSE: [(usize, usize); 6] = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)];
const CYCLE: [(usize, usize); 5] = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)];

/// Preferential attachment with one edge per new node, grown from a single
/// edge `0-1`. Targets are drawn from the list of edge endpoints, so each
/// node is picked proportionally to its degree.
fn barabasi_albert_tree<R: Rng>(rng: &mut R, n: usize) -> Vec<(usize, usize)> {
    let mut edges = vec![(0, 1)];
    let mut endpoints = vec![0, 1];
    for v in 2..n {
        let t = endpoints[rng.gen_range(0..endpoints.len())];
        edges.push((t, v));
        endpoints.push(t);
        endpoints.push(v);
    }
    edges
}

/// Generates `n_graphs` graphs, alternating house and cycle classes.
pub fn generate_ba2motifs(n_graphs: usize, seed: u64) -> Result<GraphDataset> {
    if n_graphs == 0 || !n_graphs.is_multiple_of(2) {
        return Err(Error::arg(format!(
            "BA-2Motifs needs a positive even graph count, got {n_graphs}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = BA_BASE_NODES + MOTIF_NODES;
    let graphs = (0..n_graphs)
        .map(|i| {
            let label = i % 2;
            let mut edges = barabasi_albert_tree(&mut rng, BA_BASE_NODES);
            let motif: &[(usize, usize)] = if label == 0 { &HOUSE } else { &CYCLE };
            let mut truth: Vec<(usize, usize)> = motif
                .iter()
                .map(|&(a, b)| (BA_BASE_NODES + a, BA_BASE_NODES + b))
                .collect();
            let anchor = rng.gen_range(0..BA_BASE_NODES);
            let port = BA_BASE_NODES + rng.gen_range(0..MOTIF_NODES);
            truth.push((anchor, port));
            edges.extend_from_slice(&truth);
            Graph::unlabeled(n, edges, label)?.with_motif_pairs(&truth)
        })
        .collect::<Result<Vec<_>>>()?;
    GraphDataset::new("BA2MOTIFS", graphs, 2, FeatureSpec::Constant)
}

/// Writes the ground-truth edge indices of every graph as a JSON array of
/// arrays (outer index = graph order in the dataset).
pub fn write_motif_edges(ds: &GraphDataset, path: &Path) -> Result<()> {
    let rows: Vec<Vec<usize>> = ds
        .graphs
        .iter()
        .map(|g| g.motif_edges().map(<[usize]>::to_vec).unwrap_or_default())
        .collect();
    write_json(path, &rows)
}
