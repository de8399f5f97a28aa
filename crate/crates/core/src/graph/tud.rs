//! Reader and writer for the TU benchmark plain-text format.
//!
//! * `NAME_A.txt`: one directed edge per line, `i, j`, 1-based global ids;
//!   every undirected edge appears in both directions.
//! * `NAME_graph_indicator.txt`: line `k` holds the 1-based graph id of node `k`.
//! * `NAME_graph_labels.txt`: one integer label per graph.
//! * `NAME_node_labels.txt` (optional): one integer label per node.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{degree_features, FeatureSpec, Graph, GraphDataset};
use crate::error::{Error, Result};
use crate::io::write_atomic;

fn file(root: &Path, name: &str, suffix: &str) -> PathBuf {
    root.join(format!("{name}_{suffix}.txt"))
}

fn read_lines(path: &Path, required: bool) -> Result<Option<Vec<String>>> {
    if !path.exists() {
        return if required {
            Err(Error::MissingFile(path.to_path_buf()))
        } else {
            Ok(None)
        };
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Some(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
    ))
}

fn parse_int(path: &Path, line: usize, s: &str) -> Result<i64> {
    s.trim().parse().map_err(|_| Error::Format {
        file: path.to_path_buf(),
        line,
        msg: format!("expected an integer, found `{s}`"),
    })
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        file: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Loads `root_dir/NAME_*.txt` into memory.
pub fn load_tud_dataset(
    root_dir: &Path,
    name: &str,
    feature_spec: FeatureSpec,
) -> Result<GraphDataset> {
    let a_path = file(root_dir, name, "A");
    let ind_path = file(root_dir, name, "graph_indicator");
    let lab_path = file(root_dir, name, "graph_labels");
    let nl_path = file(root_dir, name, "node_labels");

    let a_lines = read_lines(&a_path, true)?.unwrap_or_default();
    let ind_lines = read_lines(&ind_path, true)?.unwrap_or_default();
    let lab_lines = read_lines(&lab_path, true)?.unwrap_or_default();
    let nl_lines = read_lines(&nl_path, false)?;

    let num_graphs = lab_lines.len();
    let raw_labels = lab_lines
        .iter()
        .enumerate()
        .map(|(i, l)| parse_int(&lab_path, i + 1, l))
        .collect::<Result<Vec<_>>>()?;

    // global node -> (graph, local index)
    let mut node_graph = Vec::with_capacity(ind_lines.len());
    let mut local = Vec::with_capacity(ind_lines.len());
    let mut sizes = vec![0usize; num_graphs];
    for (k, l) in ind_lines.iter().enumerate() {
        let gid = parse_int(&ind_path, k + 1, l)?;
        if gid < 1 || gid as usize > num_graphs {
            return Err(format_err(
                &ind_path,
                k + 1,
                format!("graph id {gid} outside 1..={num_graphs}"),
            ));
        }
        let g = gid as usize - 1;
        node_graph.push(g);
        local.push(sizes[g]);
        sizes[g] += 1;
    }

    let node_labels = match &nl_lines {
        Some(lines) => {
            if lines.len() != node_graph.len() {
                return Err(format_err(
                    &nl_path,
                    lines.len(),
                    format!("{} node labels for {} nodes", lines.len(), node_graph.len()),
                ));
            }
            Some(
                lines
                    .iter()
                    .enumerate()
                    .map(|(i, l)| parse_int(&nl_path, i + 1, l))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        None => None,
    };

    let total = node_graph.len();
    let mut directed: Vec<HashSet<(usize, usize)>> = vec![HashSet::new(); num_graphs];
    let mut first_line: Vec<Vec<((usize, usize), usize)>> = vec![Vec::new(); num_graphs];
    for (k, l) in a_lines.iter().enumerate() {
        let line = k + 1;
        let mut parts = l.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format_err(
                &a_path,
                line,
                format!("expected `i, j`, found `{l}`"),
            ));
        };
        let (a, b) = (parse_int(&a_path, line, a)?, parse_int(&a_path, line, b)?);
        for v in [a, b] {
            if v < 1 || v as usize > total {
                return Err(format_err(
                    &a_path,
                    line,
                    format!("node {v} outside 1..={total}"),
                ));
            }
        }
        let (a, b) = (a as usize - 1, b as usize - 1);
        let g = node_graph[a];
        if node_graph[b] != g {
            return Err(format_err(
                &a_path,
                line,
                format!(
                    "edge ({}, {}) crosses graphs {} and {}",
                    a + 1,
                    b + 1,
                    g + 1,
                    node_graph[b] + 1
                ),
            ));
        }
        if a == b {
            return Err(format_err(
                &a_path,
                line,
                format!("self-loop on node {}", a + 1),
            ));
        }
        let e = (local[a], local[b]);
        if directed[g].insert(e) {
            first_line[g].push((e, line));
        }
    }

    let class_values: BTreeSet<i64> = raw_labels.iter().copied().collect();
    let class_index = |v: i64| {
        class_values
            .iter()
            .position(|&c| c == v)
            .expect("known label")
    };
    let node_values: BTreeSet<i64> = node_labels.iter().flatten().copied().collect();

    let mut graphs = Vec::with_capacity(num_graphs);
    {
        // nodes of a graph in file order
        let mut per_graph: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
        for (v, &g) in node_graph.iter().enumerate() {
            per_graph[g].push(v);
        }
        for g in 0..num_graphs {
            let mut edges = Vec::new();
            for &((i, j), line) in &first_line[g] {
                if !directed[g].contains(&(j, i)) {
                    return Err(format_err(
                        &a_path,
                        line,
                        "edge row without its reverse direction",
                    ));
                }
                if i < j {
                    edges.push((i, j));
                }
            }
            let n = sizes[g];
            let mut graph = Graph::unlabeled(n, edges, class_index(raw_labels[g]))?;
            if let Some(nl) = &node_labels {
                let labels: Vec<usize> = per_graph[g]
                    .iter()
                    .map(|&v| node_values.iter().position(|&c| c == nl[v]).expect("known"))
                    .collect();
                graph = graph.with_node_labels(labels)?;
            }
            graphs.push(graph);
        }
    }

    let max_degree = graphs
        .iter()
        .flat_map(|g| g.degrees())
        .max()
        .unwrap_or(0)
        .max(1);
    let effective = match (feature_spec, node_labels.is_some()) {
        (FeatureSpec::NodeLabelsOnehot, false) => FeatureSpec::DegreeOnehot(Some(max_degree)),
        (FeatureSpec::DegreeOnehot(None), _) => FeatureSpec::DegreeOnehot(Some(max_degree)),
        (spec, _) => spec,
    };
    let width = node_values.len();
    let graphs = graphs
        .into_iter()
        .map(|g| {
            let x = match effective {
                FeatureSpec::NodeLabelsOnehot => {
                    let labels = g.node_labels().expect("node labels present");
                    let mut x = Array2::zeros((g.num_nodes(), width));
                    for (v, &l) in labels.iter().enumerate() {
                        x[(v, l)] = 1.0;
                    }
                    x
                }
                FeatureSpec::DegreeOnehot(cap) => degree_features(&g, cap.unwrap_or(max_degree))?,
                FeatureSpec::Constant => Array2::ones((g.num_nodes(), 1)),
            };
            g.with_features(x)
        })
        .collect::<Result<Vec<_>>>()?;

    // Node labels were stored as indices into the sorted distinct values;
    // restore the raw values so a writer reproduces the files.
    let graphs = match &node_labels {
        Some(_) => {
            let values: Vec<i64> = node_values.iter().copied().collect();
            graphs
                .into_iter()
                .map(|g| {
                    let raw: Vec<usize> = g
                        .node_labels()
                        .expect("present")
                        .iter()
                        .map(|&i| values[i].max(0) as usize)
                        .collect();
                    g.with_node_labels(raw)
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => graphs,
    };

    GraphDataset::new(name, graphs, class_values.len(), effective)
}

/// Writes a dataset in TUD format. Graph labels are written as class
/// indices; node labels are written when every graph carries them.
pub fn write_tud_dataset(ds: &GraphDataset, root_dir: &Path, name: &str) -> Result<()> {
    let mut a = String::new();
    let mut ind = String::new();
    let mut labels = String::new();
    let mut nl = String::new();
    let with_nl = !ds.graphs.is_empty() && ds.graphs.iter().all(|g| g.node_labels().is_some());
    let mut offset = 0;
    for (gi, g) in ds.graphs.iter().enumerate() {
        for _ in 0..g.num_nodes() {
            writeln!(ind, "{}", gi + 1).expect("string write");
        }
        for &(i, j) in g.edges() {
            writeln!(a, "{}, {}", offset + i + 1, offset + j + 1).expect("string write");
            writeln!(a, "{}, {}", offset + j + 1, offset + i + 1).expect("string write");
        }
        writeln!(labels, "{}", g.label()).expect("string write");
        if with_nl {
            for l in g.node_labels().expect("checked") {
                writeln!(nl, "{l}").expect("string write");
            }
        }
        offset += g.num_nodes();
    }
    std::fs::create_dir_all(root_dir).map_err(|e| Error::io(root_dir, e))?;
    write_atomic(&file(root_dir, name, "A"), a.as_bytes())?;
    write_atomic(&file(root_dir, name, "graph_indicator"), ind.as_bytes())?;
    write_atomic(&file(root_dir, name, "graph_labels"), labels.as_bytes())?;
    if with_nl {
        write_atomic(&file(root_dir, name, "node_labels"), nl.as_bytes())?;
    }
    Ok(())
}
