//! The experiment configuration schema: strict JSON with unknown keys
//! rejected and errors reported as JSON pointer paths.

use anyhow::{anyhow, Result};
use dsgnn_core::autodiff::{Activation, PairNormMode, ReadoutKind};
use dsgnn_core::graph::GraphTask;
use dsgnn_core::layers::HeadCombine;
use dsgnn_core::models::{
    ArchitectureSpec, ConvKind, OutputKind, PairNormConfig, PairNormPlacement, TaskKind, Variant,
};
use dsgnn_core::training::{LrSchedule, OptimKind, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Directory with edges.tsv / features.csv / labels.csv / splits.json.
    NodeDir { path: String },
    /// JSONL file with a header line.
    GraphFile { path: String },
    SyntheticNode {
        #[serde(default = "default_num_nodes")]
        num_nodes: usize,
        #[serde(default = "default_num_classes")]
        num_classes: usize,
        #[serde(default = "default_homophily")]
        homophily: f64,
        #[serde(default = "default_feature_dim")]
        feature_dim: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        seed: u64,
    },
    SyntheticGraph {
        #[serde(default = "default_num_graphs")]
        num_graphs: usize,
        task: GraphTask,
        seed: u64,
    },
}

fn default_num_nodes() -> usize {
    600
}
fn default_num_classes() -> usize {
    3
}
fn default_homophily() -> f64 {
    0.9
}
fn default_feature_dim() -> usize {
    16
}
fn default_noise() -> f64 {
    1.0
}
fn default_num_graphs() -> usize {
    60
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantRow {
    pub variant: Variant,
    #[serde(default)]
    pub pairnorm: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub task: TaskKind,
    pub variants: Vec<VariantRow>,
    #[serde(default = "default_conv")]
    pub conv: ConvKind,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_num_heads")]
    pub num_heads: usize,
    #[serde(default = "default_head_combine")]
    pub head_combine: HeadCombine,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_readout")]
    pub readout: ReadoutKind,
    #[serde(default = "default_pairnorm_scale")]
    pub pairnorm_scale: f64,
    #[serde(default = "default_pairnorm_mode")]
    pub pairnorm_mode: PairNormMode,
    #[serde(default = "default_pairnorm_placement")]
    pub pairnorm_placement: PairNormPlacement,
    #[serde(default = "default_head_bias")]
    pub head_bias: bool,
    #[serde(default)]
    pub conv_bias: bool,
}

fn default_conv() -> ConvKind {
    ConvKind::Gat
}
fn default_hidden_dim() -> usize {
    8
}
fn default_num_heads() -> usize {
    8
}
fn default_head_combine() -> HeadCombine {
    HeadCombine::Concat
}
fn default_activation() -> Activation {
    Activation::Elu
}
fn default_readout() -> ReadoutKind {
    ReadoutKind::Max
}
fn default_pairnorm_scale() -> f64 {
    1.0
}
fn default_pairnorm_mode() -> PairNormMode {
    PairNormMode::ScaleIndividually
}
fn default_pairnorm_placement() -> PairNormPlacement {
    PairNormPlacement::AfterActivation
}
fn default_head_bias() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Adam,
    SgdMomentum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrScheduleConfig {
    pub factor: f64,
    pub period_epochs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerName,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub lr_schedule: Option<LrScheduleConfig>,
    pub lr: Vec<f64>,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: Vec<f64>,
    #[serde(default = "default_dropout")]
    pub dropout: Vec<f64>,
    pub depths: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub missing_features: f64,
    #[serde(default)]
    pub row_normalize_features: bool,
}

fn default_optimizer() -> OptimizerName {
    OptimizerName::Adam
}
fn default_momentum() -> f64 {
    0.9
}
fn default_max_epochs() -> usize {
    200
}
fn default_batch_size() -> usize {
    64
}
fn default_weight_decay() -> Vec<f64> {
    vec![0.0]
}
fn default_dropout() -> Vec<f64> {
    vec![0.0]
}
fn default_repeats() -> usize {
    1
}
fn default_folds() -> usize {
    10
}

/// Parses a config with strict validation; errors carry a JSON pointer to
/// the offending key (for example `/training/lrr`).
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| anyhow!("config error at {}: {}", pointer_of(&e), e.inner()))?;
    if cfg.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(anyhow!(
            "config error at /schema_version: expected {CONFIG_SCHEMA_VERSION}, got {}",
            cfg.schema_version
        ));
    }
    validate_config(&cfg)?;
    Ok(cfg)
}

/// JSON pointer of a deserialization error; unknown-field errors append the
/// rejected key itself.
fn pointer_of(err: &serde_path_to_error::Error<serde_json::Error>) -> String {
    let mut segments: Vec<String> = err
        .path()
        .iter()
        .filter_map(|seg| match seg {
            serde_path_to_error::Segment::Map { key } => Some(key.clone()),
            serde_path_to_error::Segment::Seq { index } => Some(index.to_string()),
            serde_path_to_error::Segment::Enum { variant } => Some(variant.clone()),
            serde_path_to_error::Segment::Unknown => None,
        })
        .collect();
    let message = err.inner().to_string();
    if let Some(rest) = message.strip_prefix("unknown field `") {
        if let Some(field) = rest.split('`').next() {
            segments.push(field.to_string());
        }
    }
    format!("/{}", segments.join("/"))
}

fn validate_config(cfg: &ExperimentConfig) -> Result<()> {
    let dataset_task = match cfg.dataset {
        DatasetConfig::NodeDir { .. } | DatasetConfig::SyntheticNode { .. } => TaskKind::Node,
        DatasetConfig::GraphFile { .. } | DatasetConfig::SyntheticGraph { .. } => TaskKind::Graph,
    };
    if dataset_task != cfg.model.task {
        return Err(anyhow!(
            "config error at /model/task: task does not match the dataset kind"
        ));
    }
    if cfg.model.variants.is_empty() {
        return Err(anyhow!(
            "config error at /model/variants: must not be empty"
        ));
    }
    if cfg.training.lr.is_empty() {
        return Err(anyhow!("config error at /training/lr: must not be empty"));
    }
    if cfg.training.depths.is_empty() {
        return Err(anyhow!(
            "config error at /training/depths: must not be empty"
        ));
    }
    if cfg.training.depths.iter().any(|&d| d < 2) {
        return Err(anyhow!(
            "config error at /training/depths: depths must be >= 2"
        ));
    }
    if !(0.0..=1.0).contains(&cfg.training.missing_features) {
        return Err(anyhow!(
            "config error at /training/missing_features: must be in [0, 1]"
        ));
    }
    Ok(())
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow!("cannot read config {}: {e}", path.display()))?;
    parse_config(&text)
}

impl ExperimentConfig {
    pub fn optim_kind(&self) -> OptimKind {
        match self.training.optimizer {
            OptimizerName::Adam => OptimKind::adam(),
            OptimizerName::SgdMomentum => OptimKind::SgdMomentum {
                momentum: self.training.momentum,
            },
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        match &self.training.lr_schedule {
            Some(s) => LrSchedule {
                factor: s.factor,
                period_epochs: s.period_epochs,
            },
            None => LrSchedule::none(),
        }
    }

    pub fn pairnorm_config(&self) -> PairNormConfig {
        PairNormConfig {
            scale: self.model.pairnorm_scale,
            mode: self.model.pairnorm_mode,
            placement: self.model.pairnorm_placement,
        }
    }

    /// Spec template with placeholder depth/dropout/variant; the sweep
    /// overwrites those per run.
    pub fn spec_template(&self, output: OutputKind) -> ArchitectureSpec {
        ArchitectureSpec {
            task: self.model.task,
            variant: self.model.variants[0].variant,
            conv: self.model.conv,
            depth: self.training.depths[0],
            hidden_dim: self.model.hidden_dim,
            num_heads: self.model.num_heads,
            head_combine: self.model.head_combine,
            activation: self.model.activation,
            readout: self.model.readout,
            pairnorm: None,
            output,
            feature_dropout: self.training.dropout[0],
            attention_dropout: self.training.dropout[0],
            head_bias: self.model.head_bias,
            conv_bias: self.model.conv_bias,
        }
    }

    pub fn train_config(&self, seed: u64, jobs: usize) -> TrainConfig {
        TrainConfig {
            max_epochs: self.training.max_epochs,
            batch_size: self.training.batch_size,
            schedule: self.lr_schedule(),
            optimizer: self.optim_kind(),
            lr_grid: self.training.lr.clone(),
            weight_decay_grid: self.training.weight_decay.clone(),
            dropout_grid: self.training.dropout.clone(),
            depths: self.training.depths.clone(),
            seed,
            repeats: self.training.repeats,
            folds: self.training.folds,
            missing_features: self.training.missing_features,
            jobs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "seed": 7,
        "dataset": {"kind": "synthetic_node", "seed": 1},
        "model": {"task": "node", "variants": [{"variant": "standard"}]},
        "training": {"lr": [0.01], "depths": [2]}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.training.max_epochs, 200);
        assert_eq!(cfg.training.weight_decay, vec![0.0]);
        assert_eq!(cfg.model.hidden_dim, 8);
    }

    #[test]
    fn unknown_top_level_key_names_pointer() {
        let bad = MINIMAL.replacen("\"seed\": 7", "\"seed\": 7, \"lrr\": 1", 1);
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("/lrr"), "{err}");
    }

    #[test]
    fn unknown_nested_key_names_full_pointer() {
        let bad = MINIMAL.replacen("\"lr\": [0.01]", "\"lr\": [0.01], \"lrr\": 1", 1);
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("/training/lrr"), "{err}");
    }

    #[test]
    fn task_dataset_mismatch_is_rejected() {
        let bad = MINIMAL.replacen("\"task\": \"node\"", "\"task\": \"graph\"", 1);
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("/model/task"), "{err}");
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let bad = MINIMAL.replacen("\"schema_version\": 1", "\"schema_version\": 9", 1);
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("/schema_version"), "{err}");
    }

    #[test]
    fn shipped_example_configs_parse() {
        let configs_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(configs_dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                read_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                seen += 1;
            }
        }
        assert!(seen >= 3, "expected the shipped example configs");
    }
}
