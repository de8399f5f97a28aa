use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_dataset, run_split, RunConfig, StageAudit, Strategy};
use crate::error::{Error, Result};
use crate::graph::GraphDataset;

/// Stratified `k`-fold split. Each class is shuffled with `seed` and dealt
/// round-robin, continuing the deal across classes so fold sizes differ by
/// at most one. Folds are returned sorted.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Split(format!("need at least 2 folds, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::Split(format!(
            "{k} folds for {} graphs",
            labels.len()
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    if let Some((y, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::Split(format!(
            "class {y} has {} graphs, too few for {k} stratified folds",
            members.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub fold: usize,
    pub test_ids: Vec<usize>,
    pub stages: Vec<StageAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub dataset: String,
    pub strategy: Strategy,
    /// Test accuracy of every fold at the selected epoch.
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `fold_accuracies`.
    pub std: f64,
    /// 1-based epoch maximizing the mean test accuracy across folds.
    pub selected_epoch: usize,
    pub mean_curve: Vec<f64>,
    pub fold_curves: Vec<Vec<f64>>,
    /// Mean edges per subgraph over all bags of all folds.
    pub mean_explanation_edges: f64,
    pub audit: Vec<FoldAudit>,
    pub config: RunConfig,
    pub wall_clock_secs: f64,
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl CVReport {
    pub fn folds(&self) -> usize {
        self.fold_accuracies.len()
    }

    /// Mean and std recomputed from the per-fold values.
    pub fn recompute_summary(&self) -> (f64, f64) {
        mean_std(&self.fold_accuracies)
    }

    /// Equality on everything except wall-clock time.
    pub fn same_results(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_clock_secs = other.wall_clock_secs;
        &a == other
    }
}

/// Cross-validates `cfg` on a dataset loaded from the config.
pub fn kfold_cv(cfg: &RunConfig) -> Result<CVReport> {
    let ds = load_dataset(cfg).map_err(|e| e.in_stage("dataset"))?;
    kfold_cv_on(cfg, &ds)
}

/// Runs the full pipeline inside every fold (folds in parallel) and reports
/// accuracies at the epoch with the best mean test accuracy across folds.
pub fn kfold_cv_on(cfg: &RunConfig, ds: &GraphDataset) -> Result<CVReport> {
    cfg.validate()?;
    let start = Instant::now();
    let folds = stratified_folds(&ds.labels(), cfg.folds, cfg.split_seed)?;
    let outcomes: Vec<_> = (0..folds.len())
        .into_par_iter()
        .map(|f| {
            let test = &folds[f];
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != f)
                .flat_map(|(_, ids)| ids.iter().copied())
                .collect();
            let out = run_split(cfg, ds, &train, test, f as u64)?;
            log::info!(
                "{} {} fold {f}: final test accuracy {:.4}",
                ds.name,
                cfg.strategy,
                out.test_curve().last().copied().unwrap_or(0.0)
            );
            Ok((out.test_curve(), out.mean_explanation_edges(), out.audit))
        })
        .collect::<Result<_>>()?;

    let epochs = outcomes[0].0.len();
    if epochs == 0 || outcomes.iter().any(|o| o.0.len() != epochs) {
        return Err(Error::Training {
            epoch: 0,
            msg: "cross-validation needs at least one training epoch".into(),
        });
    }
    let k = outcomes.len() as f64;
    let mean_curve: Vec<f64> = (0..epochs)
        .map(|e| outcomes.iter().map(|o| o.0[e]).sum::<f64>() / k)
        .collect();
    let best = mean_curve
        .iter()
        .enumerate()
        .fold(0, |b, (e, &v)| if v > mean_curve[b] { e } else { b });
    let fold_accuracies: Vec<f64> = outcomes.iter().map(|o| o.0[best]).collect();
    let (mean, std) = mean_std(&fold_accuracies);
    let mean_explanation_edges = outcomes.iter().map(|o| o.1).sum::<f64>() / k;
    let (fold_curves, audit) = outcomes
        .into_iter()
        .zip(folds)
        .enumerate()
        .map(|(fold, ((curve, _, stages), test_ids))| {
            (
                curve,
                FoldAudit {
                    fold,
                    test_ids,
                    stages,
                },
            )
        })
        .unzip();
    Ok(CVReport {
        dataset: ds.name.clone(),
        strategy: cfg.strategy,
        fold_accuracies,
        mean,
        std,
        selected_epoch: best + 1,
        mean_curve,
        fold_curves,
        mean_explanation_edges,
        audit,
        config: cfg.clone(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}
