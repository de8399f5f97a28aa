//! Three-step training, cross-validation, grid search and heatmap export.
//!
//! A run trains the backbone, optionally trains the explainer and builds one
//! bag of subgraphs per graph, then fine-tunes the DSS ensemble on the bags.
//! Every stage logs the graph ids it trained on so a fold can prove it never
//! touched its test split.

mod config;
mod cv;
mod grid;
mod heatmap;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{train_backbone_from, BackboneParams, EpochRecord};
use crate::dss::{finetune_dss_from, DssParams, FinetuneEpoch};
use crate::error::{Error, Result};
use crate::explainer::{
    generate_bag_noise, generate_bag_topk, train_explainer, ExplainerEpoch, ExplainerParams,
};
use crate::graph::{policy_edge_deleted, policy_node_deleted, Graph, GraphDataset, SubgraphBag};
use crate::seed::derive_seed;

pub use config::{load_dataset, RunConfig, Strategy};
pub use cv::{kfold_cv, kfold_cv_on, stratified_folds, CVReport, FoldAudit};
pub use grid::{default_grid, grid_points, grid_search, select_best, GridResult};
pub use heatmap::{
    aggregate_heatmap, color_for, export_heatmap, penwidth_for, ExplanationHeatmap, HeatmapFormat,
    COLOR_RAMP,
};

/// Graph ids a training stage consumed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageAudit {
    pub stage: String,
    pub graph_ids: Vec<usize>,
}

/// Everything produced by one train/test split.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub backbone: BackboneParams,
    pub backbone_history: Vec<EpochRecord>,
    pub explainer: Option<ExplainerParams>,
    pub explainer_history: Vec<ExplainerEpoch>,
    pub dss: Option<DssParams>,
    pub finetune_history: Vec<FinetuneEpoch>,
    /// One bag per graph of the split, ordered by graph id.
    pub bags: Vec<SubgraphBag>,
    pub audit: Vec<StageAudit>,
}

impl SplitOutcome {
    /// Test accuracy after every epoch of the final training stage.
    pub fn test_curve(&self) -> Vec<f64> {
        if self.dss.is_some() {
            self.finetune_history
                .iter()
                .map(|r| r.eval_acc.unwrap_or(0.0))
                .collect()
        } else {
            self.backbone_history
                .iter()
                .map(|r| r.val_acc.unwrap_or(0.0))
                .collect()
        }
    }

    pub fn mean_explanation_edges(&self) -> f64 {
        if self.bags.is_empty() {
            return 0.0;
        }
        self.bags.iter().map(SubgraphBag::mean_edges).sum::<f64>() / self.bags.len() as f64
    }

    pub fn bag(&self, graph_id: usize) -> Option<&SubgraphBag> {
        self.bags
            .binary_search_by_key(&graph_id, |b| b.graph_id)
            .ok()
            .map(|i| &self.bags[i])
    }
}

// Seed streams of a split.
const STREAM_BACKBONE: u64 = 1;
const STREAM_EXPLAINER: u64 = 2;
const STREAM_FINETUNE: u64 = 3;
const STREAM_BAGS: u64 = 4;

/// Bag of graph `id` under the configured strategy.
pub fn build_bag(
    cfg: &RunConfig,
    id: usize,
    g: &Graph,
    backbone: &BackboneParams,
    explainer: Option<&ExplainerParams>,
    seed: u64,
) -> Result<SubgraphBag> {
    let ex = || explainer.ok_or_else(|| Error::arg("explainer bags need a trained explainer"));
    match cfg.strategy {
        Strategy::Gin => Ok(SubgraphBag::full(id, g)),
        Strategy::Ed if g.num_edges() == 0 => Ok(SubgraphBag::full(id, g)),
        Strategy::Ed => policy_edge_deleted(id, g),
        Strategy::Nd => policy_node_deleted(id, g),
        Strategy::Noise => generate_bag_noise(
            id,
            g,
            backbone,
            ex()?,
            cfg.bag_size,
            cfg.noise_scale,
            cfg.temperature_end,
            cfg.threshold,
            seed,
        ),
        Strategy::Topk => {
            generate_bag_topk(id, g, backbone, ex()?, &cfg.fractions, cfg.temperature_end)
        }
    }
}

fn split_seed(cfg: &RunConfig, split: u64, stream: u64) -> u64 {
    derive_seed(cfg.seed, &[split, stream])
}

/// Heatmaps of every graph in `ds` from trained step-1 and step-2 models,
/// with the bag seeds a single `train` run uses.
pub fn explain_dataset(
    cfg: &RunConfig,
    ds: &GraphDataset,
    backbone: &BackboneParams,
    explainer: Option<&ExplainerParams>,
) -> Result<Vec<ExplanationHeatmap>> {
    let seed = split_seed(cfg, 0, STREAM_BAGS);
    ds.graphs
        .iter()
        .enumerate()
        .map(|(i, g)| aggregate_heatmap(&build_bag(cfg, i, g, backbone, explainer, seed)?, g))
        .collect()
}

fn check_disjoint(audit: &[StageAudit], test: &BTreeSet<usize>) -> Result<()> {
    for a in audit {
        if let Some(id) = a.graph_ids.iter().find(|id| test.contains(id)) {
            return Err(Error::Data(format!(
                "stage {} trained on test graph {id}",
                a.stage
            )));
        }
    }
    Ok(())
}

/// Runs the configured strategy on one split. `split` keys the seed streams.
pub fn run_split(
    cfg: &RunConfig,
    ds: &GraphDataset,
    train_ids: &[usize],
    test_ids: &[usize],
    split: u64,
) -> Result<SplitOutcome> {
    cfg.validate()?;
    if train_ids.is_empty() {
        return Err(Error::Split("empty training split".into()));
    }
    let test_set: BTreeSet<usize> = test_ids.iter().copied().collect();
    if train_ids.iter().any(|i| test_set.contains(i)) {
        return Err(Error::Split("train and test splits overlap".into()));
    }
    let graph = |i: usize| -> Result<&Graph> {
        ds.graphs
            .get(i)
            .ok_or_else(|| Error::Split(format!("graph id {i} out of range")))
    };
    let train: Vec<&Graph> = train_ids.iter().map(|&i| graph(i)).collect::<Result<_>>()?;
    let test: Vec<&Graph> = test_ids.iter().map(|&i| graph(i)).collect::<Result<_>>()?;
    let mut audit = Vec::new();
    let stage_ids = |stage: &str| StageAudit {
        stage: stage.to_string(),
        graph_ids: train_ids.to_vec(),
    };

    let seed = |stream: u64| split_seed(cfg, split, stream);
    let bb_cfg = cfg.backbone_config(seed(STREAM_BACKBONE));
    let mut rng = ChaCha8Rng::seed_from_u64(bb_cfg.seed);
    let init = BackboneParams::init_with(
        &mut rng,
        ds.feature_dim(),
        cfg.hidden,
        cfg.num_layers,
        ds.num_classes,
    );
    let (backbone, backbone_history) =
        train_backbone_from(init, &train, &test, &bb_cfg).map_err(|e| e.in_stage("backbone"))?;
    audit.push(stage_ids("backbone"));

    let mut outcome = SplitOutcome {
        backbone,
        backbone_history,
        explainer: None,
        explainer_history: Vec::new(),
        dss: None,
        finetune_history: Vec::new(),
        bags: Vec::new(),
        audit,
    };
    if cfg.strategy == Strategy::Gin {
        check_disjoint(&outcome.audit, &test_set)?;
        return Ok(outcome);
    }

    if cfg.strategy.uses_explainer() {
        let ex_cfg = cfg.explainer_config(seed(STREAM_EXPLAINER));
        let (ex, hist) = train_explainer(&train, &outcome.backbone, &ex_cfg)
            .map_err(|e| e.in_stage("explainer"))?;
        outcome.explainer = Some(ex);
        outcome.explainer_history = hist;
        outcome.audit.push(stage_ids("explainer"));
    }

    let mut ids: Vec<usize> = train_ids.iter().chain(test_ids).copied().collect();
    ids.sort_unstable();
    outcome.bags = ids
        .iter()
        .map(|&i| {
            build_bag(
                cfg,
                i,
                &ds.graphs[i],
                &outcome.backbone,
                outcome.explainer.as_ref(),
                seed(STREAM_BAGS),
            )
        })
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("bags"))?;

    let items = |subset: &[usize]| -> Vec<(&Graph, &SubgraphBag)> {
        subset
            .iter()
            .map(|&i| {
                (
                    &ds.graphs[i],
                    outcome.bag(i).expect("bag built for every id"),
                )
            })
            .collect()
    };
    let ft_cfg = cfg.finetune_config(seed(STREAM_FINETUNE));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ft_cfg.seed, &[0]));
    let init = DssParams::from_backbone(&mut rng, &outcome.backbone);
    let (dss, hist) = finetune_dss_from(init, &items(train_ids), &items(test_ids), &ft_cfg)
        .map_err(|e| e.in_stage("finetune"))?;
    outcome.dss = Some(dss);
    outcome.finetune_history = hist;
    outcome.audit.push(stage_ids("finetune"));
    check_disjoint(&outcome.audit, &test_set)?;
    Ok(outcome)
}

/// Output of a single three-step run on a held-out split.
#[derive(Debug, Clone)]
pub struct ThreeStepResult {
    pub dataset: GraphDataset,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub outcome: SplitOutcome,
    pub heatmaps: Vec<ExplanationHeatmap>,
    pub test_accuracy: f64,
}

/// Loads the dataset, holds out the first stratified fold as the test split
/// and runs all three steps on the rest.
pub fn run_three_step(cfg: &RunConfig) -> Result<ThreeStepResult> {
    let ds = load_dataset(cfg).map_err(|e| e.in_stage("dataset"))?;
    let folds = stratified_folds(&ds.labels(), cfg.folds, cfg.split_seed)?;
    let test_ids = folds[0].clone();
    let held: BTreeSet<usize> = test_ids.iter().copied().collect();
    let train_ids: Vec<usize> = (0..ds.len()).filter(|i| !held.contains(i)).collect();
    let outcome = run_split(cfg, &ds, &train_ids, &test_ids, 0)?;
    let heatmaps = outcome
        .bags
        .iter()
        .map(|b| aggregate_heatmap(b, &ds.graphs[b.graph_id]))
        .collect::<Result<_>>()?;
    let test_accuracy = outcome.test_curve().last().copied().unwrap_or(0.0);
    Ok(ThreeStepResult {
        dataset: ds,
        train_ids,
        test_ids,
        outcome,
        heatmaps,
        test_accuracy,
    })
}
