//! Explainable-by-design subgraph-enhanced graph classification.
//!
//! The pipeline has three steps:
//!
//! 1. train a GIN classifier ([`backbone`]) on the original graphs;
//! 2. train an edge-mask [`explainer`] against the frozen classifier, using
//!    hard (binarized) masks with straight-through gradients, then turn its
//!    output into a bag of explanation subgraphs per graph;
//! 3. fine-tune the classifier inside a DSS-GNN ([`dss`]) that encodes every
//!    subgraph of the bag and shares information through the bag aggregate.
//!
//! The per-edge frequency over a bag is the explanation heatmap returned with
//! each prediction. [`pipeline`] runs the whole thing, k-fold evaluation and
//! grid search.

pub mod backbone;
pub mod dss;
pub mod error;
pub mod explainer;
pub mod graph;
pub mod io;
pub mod pipeline;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
