use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{TrainConfig, HIDDEN, NUM_LAYERS};
use crate::dss::FinetuneConfig;
use crate::error::{Error, Result};
use crate::explainer::{ExplainerConfig, DEFAULT_FRACTIONS};
use crate::graph::{generate_ba2motifs, load_tud_dataset, FeatureSpec, GraphDataset};

/// Which model a run trains, and how bags are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Plain backbone, no bags.
    Gin,
    /// Explainer bags from independent noisy draws.
    Noise,
    /// Explainer bags from nested top-K budgets.
    Topk,
    /// Edge-deleted bags.
    Ed,
    /// Node-deleted bags.
    Nd,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Self::Gin, Self::Noise, Self::Topk, Self::Ed, Self::Nd];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gin => "gin",
            Self::Noise => "noise",
            Self::Topk => "topk",
            Self::Ed => "ed",
            Self::Nd => "nd",
        }
    }

    pub fn uses_explainer(self) -> bool {
        matches!(self, Self::Noise | Self::Topk)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == lower)
            .ok_or_else(|| Error::arg(format!("unknown strategy {s:?} (gin, noise, topk, ed, nd)")))
    }
}

/// Flat run configuration. Every field has a default, so a config file only
/// lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// TUD dataset name, or `BA2MOTIFS` for the synthetic benchmark.
    pub dataset: String,
    /// Directory holding one sub-directory per TUD dataset.
    pub data_dir: PathBuf,
    pub feature_spec: FeatureSpec,
    pub ba2motifs_graphs: usize,
    pub data_seed: u64,

    pub strategy: Strategy,
    /// Fraction of each bag resampled per fine-tuning epoch.
    pub bag_fraction: f64,

    pub num_layers: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub backbone_epochs: usize,

    pub sparsity_weight: f64,
    pub noise_scale: f64,
    pub train_noise_scale: f64,
    pub threshold: f64,
    pub temperature_start: f64,
    pub temperature_end: f64,
    pub bag_size: usize,
    pub fractions: Vec<f64>,
    pub explainer_epochs: usize,
    pub explainer_lr: f64,

    pub finetune_epochs: usize,
    pub finetune_lr: f64,

    pub seed: u64,
    pub split_seed: u64,
    pub folds: usize,
    /// Hyperparameter grid: config field name → candidate values.
    pub grid: BTreeMap<String, Vec<serde_json::Value>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ex = ExplainerConfig::default();
        let bb = TrainConfig::default();
        let ft = FinetuneConfig::default();
        Self {
            dataset: "MUTAG".into(),
            data_dir: PathBuf::from("data"),
            feature_spec: FeatureSpec::NodeLabelsOnehot,
            ba2motifs_graphs: 1000,
            data_seed: 0,
            strategy: Strategy::Topk,
            bag_fraction: 1.0,
            num_layers: NUM_LAYERS,
            hidden: HIDDEN,
            batch_size: bb.batch_size,
            lr: bb.lr,
            backbone_epochs: bb.epochs,
            sparsity_weight: ex.sparsity_weight,
            noise_scale: ex.noise_scale,
            train_noise_scale: ex.train_noise_scale,
            threshold: ex.threshold,
            temperature_start: ex.temperature_start,
            temperature_end: ex.temperature_end,
            bag_size: ex.bag_size,
            fractions: DEFAULT_FRACTIONS.to_vec(),
            explainer_epochs: ex.epochs,
            explainer_lr: ex.lr,
            finetune_epochs: ft.epochs,
            finetune_lr: ft.lr,
            seed: 0,
            split_seed: 0,
            folds: 10,
            grid: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::arg(format!(
                "fold count must be at least 2, got {}",
                self.folds
            )));
        }
        if self.num_layers == 0 || self.hidden == 0 {
            return Err(Error::arg("backbone needs at least one layer and width"));
        }
        if !(self.bag_fraction > 0.0 && self.bag_fraction <= 1.0) {
            return Err(Error::arg(format!(
                "bag fraction {} outside (0, 1]",
                self.bag_fraction
            )));
        }
        if !(self.lr >= 0.0 && self.finetune_lr >= 0.0 && self.explainer_lr >= 0.0) {
            return Err(Error::arg("learning rates must be non-negative"));
        }
        self.explainer_config(0).validate()
    }

    pub fn backbone_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.backbone_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
        }
    }

    pub fn explainer_config(&self, seed: u64) -> ExplainerConfig {
        ExplainerConfig {
            temperature_start: self.temperature_start,
            temperature_end: self.temperature_end,
            sparsity_weight: self.sparsity_weight,
            noise_scale: self.noise_scale,
            train_noise_scale: self.train_noise_scale,
            threshold: self.threshold,
            bag_size: self.bag_size,
            fractions: self.fractions.clone(),
            epochs: self.explainer_epochs,
            lr: self.explainer_lr,
            batch_size: self.batch_size,
            seed,
        }
    }

    pub fn finetune_config(&self, seed: u64) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.finetune_epochs,
            batch_size: self.batch_size,
            lr: self.finetune_lr,
            bag_fraction: self.bag_fraction,
            seed,
        }
    }

    /// Copy with `field` replaced by `value`, type-checked through serde.
    pub fn with_field(&self, field: &str, value: &serde_json::Value) -> Result<Self> {
        if field == "grid" {
            return Err(Error::arg("the grid cannot vary itself"));
        }
        let mut v = serde_json::to_value(self)?;
        let map = v.as_object_mut().expect("config serializes to an object");
        if !map.contains_key(field) {
            return Err(Error::arg(format!("unknown config field {field:?}")));
        }
        map.insert(field.to_string(), value.clone());
        let cfg: Self = serde_json::from_value(v)
            .map_err(|e| Error::arg(format!("bad value {value} for {field}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loads or generates the dataset named by `cfg`.
pub fn load_dataset(cfg: &RunConfig) -> Result<GraphDataset> {
    if cfg.dataset.eq_ignore_ascii_case("ba2motifs")
        || cfg.dataset.eq_ignore_ascii_case("ba-2motifs")
    {
        return generate_ba2motifs(cfg.ba2motifs_graphs, cfg.data_seed);
    }
    load_tud_dataset(
        &cfg.data_dir.join(&cfg.dataset),
        &cfg.dataset,
        cfg.feature_spec,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"strategy": "topk", "sparsity_weight": 0.5}"#).unwrap();
        assert_eq!(cfg.strategy, Strategy::Topk);
        assert_eq!(cfg.sparsity_weight, 0.5);
        assert_eq!(cfg.folds, 10);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"lamda": 0.5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"folds": 1}"#).is_err());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("ED".parse::<Strategy>().unwrap(), Strategy::Ed);
        assert_eq!("topk".parse::<Strategy>().unwrap(), Strategy::Topk);
        assert!("edge".parse::<Strategy>().is_err());
    }

    #[test]
    fn field_override() {
        let cfg = RunConfig::default();
        let c = cfg.with_field("noise_scale", &json!(2.0)).unwrap();
        assert_eq!(c.noise_scale, 2.0);
        assert!(cfg.with_field("noise_scal", &json!(2.0)).is_err());
        assert!(cfg.with_field("folds", &json!("ten")).is_err());
        let c = cfg.with_field("strategy", &json!("nd")).unwrap();
        assert_eq!(c.strategy, Strategy::Nd);
    }
}
