use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{kfold_cv_on, load_dataset, CVReport, RunConfig};
use crate::error::{Error, Result};

/// Grid used when a config does not define one.
pub fn default_grid() -> BTreeMap<String, Vec<Value>> {
    BTreeMap::from([
        (
            "sparsity_weight".into(),
            vec![json!(0.05), json!(0.1), json!(0.5), json!(1.0)],
        ),
        (
            "noise_scale".into(),
            vec![json!(0.5), json!(1.0), json!(2.0)],
        ),
        ("strategy".into(), vec![json!("noise"), json!("topk")]),
    ])
}

/// Cartesian product of the grid, keys in sorted order and values in the
/// listed order. Every returned config has an empty grid.
pub fn grid_points(cfg: &RunConfig) -> Result<Vec<RunConfig>> {
    if cfg.grid.is_empty() {
        return Err(Error::arg("grid search needs a non-empty grid"));
    }
    let mut base = cfg.clone();
    base.grid.clear();
    let mut points = vec![base];
    for (field, values) in &cfg.grid {
        if values.is_empty() {
            return Err(Error::arg(format!("grid field {field} has no values")));
        }
        points = points
            .iter()
            .flat_map(|p| values.iter().map(move |v| p.with_field(field, v)))
            .collect::<Result<_>>()?;
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: RunConfig,
    pub best_index: usize,
    /// One report per grid point, in `grid_points` order.
    pub reports: Vec<CVReport>,
}

fn canonical(cfg: &RunConfig) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

/// Best first: higher mean accuracy, then fewer explanation edges, then the
/// lexicographically smaller config.
fn rank(a: &CVReport, b: &CVReport) -> Ordering {
    b.mean
        .total_cmp(&a.mean)
        .then(
            a.mean_explanation_edges
                .total_cmp(&b.mean_explanation_edges),
        )
        .then_with(|| canonical(&a.config).cmp(&canonical(&b.config)))
}

/// Picks the best report under the tie rules.
pub fn select_best(reports: &[CVReport]) -> Option<usize> {
    (0..reports.len()).min_by(|&i, &j| rank(&reports[i], &reports[j]))
}

/// Exhaustive grid search; every point is a full cross-validation.
pub fn grid_search(cfg: &RunConfig) -> Result<GridResult> {
    let points = grid_points(cfg)?;
    let ds = load_dataset(cfg).map_err(|e| e.in_stage("dataset"))?;
    let reports: Vec<CVReport> = points
        .par_iter()
        .map(|p| {
            let r = kfold_cv_on(p, &ds)?;
            log::info!(
                "grid point {}: {:.4} ± {:.4}",
                serde_json::to_string(p)?,
                r.mean,
                r.std
            );
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let best_index = select_best(&reports).expect("at least one grid point");
    Ok(GridResult {
        best: points[best_index].clone(),
        best_index,
        reports,
    })
}
