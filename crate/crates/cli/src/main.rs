//! `sgnn`: train, cross-validate and explain subgraph-enhanced GNNs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sgnn_core::backbone::BackboneParams;
use sgnn_core::explainer::ExplainerParams;
use sgnn_core::graph::{generate_ba2motifs, write_motif_edges, write_tud_dataset};
use sgnn_core::io::{write_json, write_jsonl};
use sgnn_core::pipeline::{
    default_grid, explain_dataset, export_heatmap, grid_search, kfold_cv, load_dataset,
    run_three_step, CVReport, ExplanationHeatmap, HeatmapFormat, RunConfig, Strategy,
};
use sgnn_core::tensor::Checkpoint;
use sgnn_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "sgnn", version, about, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the BA-2Motifs benchmark in TUD format.
    GenBa2motifs {
        #[command(flatten)]
        common: Common,
        /// Number of graphs (even).
        #[arg(long, default_value_t = 1000)]
        graphs: usize,
    },
    /// Run the three training steps on one held-out split.
    Train(Common),
    /// Stratified k-fold cross-validation.
    Cv(Common),
    /// Exhaustive grid search, one cross-validation per grid point.
    Grid(Common),
    /// Emit explanation heatmaps from a `train` output directory.
    Explain {
        #[command(flatten)]
        common: Common,
        /// Directory written by `sgnn train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated heatmap formats (json, dot, svg).
        #[arg(long, default_value = "json,svg")]
        formats: String,
    },
    /// Cross-validate a baseline row: gin, ed or nd.
    Baseline(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat JSON config file; the flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset name (TUD directory under the data dir, or BA2MOTIFS).
    #[arg(long)]
    dataset: Option<String>,
    /// Directory holding TUD datasets.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Bag strategy: gin, noise, topk, ed or nd.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Fraction of each bag sampled per fine-tuning epoch.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(d) = &self.data_dir {
            cfg.data_dir = d.clone();
        }
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(f) = self.fraction {
            cfg.bag_fraction = f;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.folds {
            cfg.folds = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let defaults = RunConfig::default()
        .to_json()
        .unwrap_or_else(|e| format!("<{e}>"));
    let cmd = Cli::command().after_long_help(format!("Config defaults:\n{defaults}"));
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenBa2motifs { common, graphs } => {
            gen_ba2motifs(&common, graphs).map_err(|e| e.in_stage("gen-ba2motifs"))
        }
        Command::Train(c) => train(&c).map_err(|e| e.in_stage("train")),
        Command::Cv(c) => cv(&c).map_err(|e| e.in_stage("cv")),
        Command::Grid(c) => grid(&c).map_err(|e| e.in_stage("grid")),
        Command::Explain {
            common,
            checkpoint,
            formats,
        } => explain(&common, &checkpoint, &formats).map_err(|e| e.in_stage("explain")),
        Command::Baseline(c) => baseline(&c).map_err(|e| e.in_stage("baseline")),
    }
}

fn gen_ba2motifs(c: &Common, graphs: usize) -> Result<()> {
    let ds = generate_ba2motifs(graphs, c.seed.unwrap_or(0))?;
    write_tud_dataset(&ds, &c.out_dir, &ds.name)?;
    write_motif_edges(
        &ds,
        &c.out_dir.join(format!("{}_motif_edges.json", ds.name)),
    )?;
    println!("wrote {} graphs to {}", ds.len(), c.out_dir.display());
    Ok(())
}

fn parse_formats(s: &str) -> Result<Vec<HeatmapFormat>> {
    s.split(',').map(|f| f.trim().parse()).collect()
}

fn write_heatmap(h: &ExplanationHeatmap, dir: &Path, formats: &[HeatmapFormat]) -> Result<()> {
    for &f in formats {
        let path = dir.join(format!("graph_{}.{}", h.graph_id, f.extension()));
        export_heatmap(h, f, &path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    dataset: &'a str,
    strategy: Strategy,
    test_accuracy: f64,
    mean_explanation_edges: f64,
    train_ids: &'a [usize],
    test_ids: &'a [usize],
}

fn train(c: &Common) -> Result<()> {
    let cfg = c.run_config()?;
    let out = &c.out_dir;
    let r = run_three_step(&cfg)?;
    write_json(&out.join("config.json"), &cfg)?;
    Checkpoint::from_module("", &r.outcome.backbone).save(&out.join("backbone.json"))?;
    write_jsonl(
        &out.join("history_backbone.jsonl"),
        &r.outcome.backbone_history,
    )?;
    if let Some(ex) = &r.outcome.explainer {
        Checkpoint::from_module("", ex).save(&out.join("explainer.json"))?;
        write_jsonl(
            &out.join("history_explainer.jsonl"),
            &r.outcome.explainer_history,
        )?;
    }
    if let Some(dss) = &r.outcome.dss {
        Checkpoint::from_module("", dss).save(&out.join("dss.json"))?;
        write_jsonl(
            &out.join("history_finetune.jsonl"),
            &r.outcome.finetune_history,
        )?;
    }
    let dir = out.join("heatmaps");
    for h in &r.heatmaps {
        let formats: &[HeatmapFormat] = if r.test_ids.binary_search(&h.graph_id).is_ok() {
            &[HeatmapFormat::Json, HeatmapFormat::Dot, HeatmapFormat::Svg]
        } else {
            &[HeatmapFormat::Json]
        };
        write_heatmap(h, &dir, formats)?;
    }
    write_json(
        &out.join("summary.json"),
        &TrainSummary {
            dataset: &r.dataset.name,
            strategy: cfg.strategy,
            test_accuracy: r.test_accuracy,
            mean_explanation_edges: r.outcome.mean_explanation_edges(),
            train_ids: &r.train_ids,
            test_ids: &r.test_ids,
        },
    )?;
    println!(
        "{} {}: test accuracy {:.4} on {} graphs; outputs in {}",
        r.dataset.name,
        cfg.strategy,
        r.test_accuracy,
        r.test_ids.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CurvePoint {
    epoch: usize,
    test_acc: f64,
}

fn write_cv(report: &CVReport, out: &Path, name: &str) -> Result<()> {
    write_json(&out.join(name), report)?;
    for (k, curve) in report.fold_curves.iter().enumerate() {
        let rows: Vec<CurvePoint> = curve
            .iter()
            .enumerate()
            .map(|(e, &a)| CurvePoint {
                epoch: e + 1,
                test_acc: a,
            })
            .collect();
        write_jsonl(&out.join(format!("history_fold{k}.jsonl")), &rows)?;
    }
    println!(
        "{} {}: {:.2} ± {:.2} over {} folds (epoch {})",
        report.dataset,
        report.strategy,
        100.0 * report.mean,
        100.0 * report.std,
        report.folds(),
        report.selected_epoch
    );
    Ok(())
}

fn cv(c: &Common) -> Result<()> {
    let cfg = c.run_config()?;
    let report = kfold_cv(&cfg)?;
    write_cv(&report, &c.out_dir, "cv_report.json")
}

fn baseline(c: &Common) -> Result<()> {
    let mut cfg = c.run_config()?;
    if c.strategy.is_none() && c.config.is_none() {
        cfg.strategy = Strategy::Gin;
    }
    if cfg.strategy.uses_explainer() {
        return Err(Error::Argument(format!(
            "baseline strategy must be gin, ed or nd, got {}",
            cfg.strategy
        )));
    }
    let report = kfold_cv(&cfg)?;
    let name = format!("baseline_{}_{}.json", cfg.strategy, cfg.bag_fraction);
    write_cv(&report, &c.out_dir, &name)
}

fn grid(c: &Common) -> Result<()> {
    let mut cfg = c.run_config()?;
    if cfg.grid.is_empty() {
        cfg.grid = default_grid();
    }
    let result = grid_search(&cfg)?;
    write_json(&c.out_dir.join("grid_report.json"), &result)?;
    write_json(&c.out_dir.join("best_config.json"), &result.best)?;
    let best = &result.reports[result.best_index];
    println!(
        "best of {} points: {:.2} ± {:.2} ({})",
        result.reports.len(),
        100.0 * best.mean,
        100.0 * best.std,
        serde_json::to_string(&best.config)?
    );
    Ok(())
}

fn explain(c: &Common, checkpoint: &Path, formats: &str) -> Result<()> {
    let formats = parse_formats(formats)?;
    let common = if c.config.is_none() {
        Common {
            config: Some(checkpoint.join("config.json")),
            ..c.clone()
        }
    } else {
        c.clone()
    };
    let cfg = common.run_config()?;
    let ds = load_dataset(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut backbone = BackboneParams::init_with(
        &mut rng,
        ds.feature_dim(),
        cfg.hidden,
        cfg.num_layers,
        ds.num_classes,
    );
    Checkpoint::load(&checkpoint.join("backbone.json"))?.load_into("", &mut backbone)?;
    let explainer = if cfg.strategy.uses_explainer() {
        let mut ex = ExplainerParams::zeros(cfg.hidden);
        Checkpoint::load(&checkpoint.join("explainer.json"))?.load_into("", &mut ex)?;
        Some(ex)
    } else {
        None
    };
    let heatmaps = explain_dataset(&cfg, &ds, &backbone, explainer.as_ref())?;
    let dir = c.out_dir.join("heatmaps");
    for h in &heatmaps {
        write_heatmap(h, &dir, &formats)?;
    }
    println!("wrote {} heatmaps to {}", heatmaps.len(), dir.display());
    Ok(())
}
