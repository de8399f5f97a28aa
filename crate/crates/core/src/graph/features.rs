use ndarray::Array2;

use super::Graph;
use crate::error::{Error, Result};

/// One-hot encoding of `min(degree, cap)` in dimension `cap + 1`.
pub fn degree_features(g: &Graph, cap: usize) -> Result<Array2<f64>> {
    if cap == 0 {
        return Err(Error::arg("degree cap must be at least 1"));
    }
    let mut x = Array2::zeros((g.num_nodes(), cap + 1));
    for (v, d) in g.degrees().into_iter().enumerate() {
        x[(v, d.min(cap))] = 1.0;
    }
    Ok(x)
}
