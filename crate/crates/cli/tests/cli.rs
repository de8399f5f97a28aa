use std::path::Path;
use std::process::{Command, Output};

fn sgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgnn"))
        .args(args)
        .output()
        .unwrap()
}

fn tiny_config(dir: &Path, data_dir: &Path, strategy: &str) -> String {
    let cfg = serde_json::json!({
        "dataset": "BA2MOTIFS",
        "ba2motifs_graphs": 24,
        "data_dir": data_dir,
        "strategy": strategy,
        "hidden": 8,
        "num_layers": 2,
        "backbone_epochs": 3,
        "explainer_epochs": 2,
        "finetune_epochs": 2,
        "bag_size": 3,
        "folds": 2,
    });
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = sgnn(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_and_flag_exit_2() {
    assert_eq!(sgnn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sgnn(&["cv", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn help_lists_config_defaults() {
    let out = sgnn(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("backbone_epochs"));
}

#[test]
fn gen_ba2motifs_writes_tud_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgnn(&[
        "gen-ba2motifs",
        "--graphs",
        "10",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for suffix in [
        "A.txt",
        "graph_indicator.txt",
        "graph_labels.txt",
        "motif_edges.json",
    ] {
        assert!(
            dir.path().join(format!("BA2MOTIFS_{suffix}")).exists(),
            "{suffix}"
        );
    }
}

#[test]
fn missing_dataset_fails_with_stage_tag() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgnn(&[
        "cv",
        "--dataset",
        "NOPE",
        "--data-dir",
        dir.path().to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: stage `dataset`"), "{err}");
}

#[test]
fn cv_writes_report_and_histories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), dir.path(), "topk");
    let out_dir = dir.path().join("out");
    let out = sgnn(&[
        "cv",
        "--config",
        &cfg,
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("cv_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["fold_accuracies"].as_array().unwrap().len(), 2);
    assert!(out_dir.join("history_fold0.jsonl").exists());
    assert!(out_dir.join("history_fold1.jsonl").exists());
}

#[test]
fn train_then_explain_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), dir.path(), "noise");
    let ckpt = dir.path().join("run");
    let out = sgnn(&[
        "train",
        "--config",
        &cfg,
        "--out-dir",
        ckpt.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "config.json",
        "backbone.json",
        "explainer.json",
        "dss.json",
        "summary.json",
    ] {
        assert!(ckpt.join(f).exists(), "{f}");
    }
    assert!(ckpt.join("heatmaps/graph_0.json").exists());

    let again = dir.path().join("again");
    let out = sgnn(&[
        "explain",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--formats",
        "json,dot",
        "--out-dir",
        again.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = std::fs::read_to_string(ckpt.join("heatmaps/graph_0.json")).unwrap();
    let b = std::fs::read_to_string(again.join("heatmaps/graph_0.json")).unwrap();
    assert_eq!(a, b);
    assert!(again.join("heatmaps/graph_0.dot").exists());
}

#[test]
fn baseline_rejects_explainer_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgnn(&[
        "baseline",
        "--strategy",
        "noise",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("baseline"));
}

#[test]
fn baseline_names_report_after_strategy_and_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), dir.path(), "gin");
    let out = sgnn(&[
        "baseline",
        "--config",
        &cfg,
        "--strategy",
        "ED",
        "--fraction",
        "0.5",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("baseline_ed_0.5.json").exists());
}
