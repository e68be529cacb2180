//! Dataset loading shared by the commands, plus the preprocessing recorded
//! in checkpoint provenance (row normalization and missing-features
//! masking) so eval and export reproduce exactly what training saw.

use crate::config::DatasetConfig;
use anyhow::{anyhow, Context, Result};
use dsgnn_core::graph::{
    load_graph_dataset, load_node_dataset, make_folds, synthetic_graph_task, synthetic_node_task,
    zero_features, GraphDataset, Splits, SyntheticNodeParams,
};
use dsgnn_core::models::OutputKind;
use dsgnn_core::{seed_stream, NodeDataset};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub enum LoadedDataset {
    Node(NodeDataset),
    Graph(GraphDataset),
}

impl LoadedDataset {
    pub fn output_kind(&self) -> OutputKind {
        match self {
            LoadedDataset::Node(ds) => OutputKind::Classification {
                num_classes: ds.num_classes,
            },
            LoadedDataset::Graph(ds) => match ds.task {
                dsgnn_core::graph::GraphTask::Classification => OutputKind::Classification {
                    num_classes: ds.num_classes,
                },
                dsgnn_core::graph::GraphTask::Regression => OutputKind::Regression,
            },
        }
    }
}

pub fn load_from_config(cfg: &DatasetConfig) -> Result<LoadedDataset> {
    match cfg {
        DatasetConfig::NodeDir { path } => Ok(LoadedDataset::Node(
            load_node_dataset(Path::new(path)).with_context(|| format!("loading {path}"))?,
        )),
        DatasetConfig::GraphFile { path } => Ok(LoadedDataset::Graph(
            load_graph_dataset(Path::new(path)).with_context(|| format!("loading {path}"))?,
        )),
        DatasetConfig::SyntheticNode {
            num_nodes,
            num_classes,
            homophily,
            feature_dim,
            noise,
            seed,
        } => {
            let params = SyntheticNodeParams::new(
                *num_nodes,
                *num_classes,
                *homophily,
                *feature_dim,
                *noise,
            );
            Ok(LoadedDataset::Node(synthetic_node_task(&params, *seed)))
        }
        DatasetConfig::SyntheticGraph {
            num_graphs,
            task,
            seed,
        } => Ok(LoadedDataset::Graph(synthetic_graph_task(
            *num_graphs,
            *task,
            *seed,
        ))),
    }
}

/// Loads by path: a directory is a node dataset, a file a graph dataset.
pub fn load_from_path(path: &Path) -> Result<LoadedDataset> {
    if path.is_dir() {
        Ok(LoadedDataset::Node(load_node_dataset(path)?))
    } else if path.is_file() {
        Ok(LoadedDataset::Graph(load_graph_dataset(path)?))
    } else {
        Err(anyhow!("dataset path {} does not exist", path.display()))
    }
}

/// Preprocessing provenance stored inside checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: serde_json::Value,
    pub row_normalize: bool,
    pub missing_features: f64,
    pub master_seed: u64,
    /// Graph tasks only: how the training split was derived.
    pub graph_split: Option<GraphSplitProvenance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSplitProvenance {
    pub folds: usize,
    pub fold_index: usize,
    pub repeat: usize,
}

/// Applies the recorded preprocessing to a freshly loaded node dataset.
pub fn preprocess_node(
    ds: &mut NodeDataset,
    row_normalize: bool,
    missing_features: f64,
    master_seed: u64,
) {
    if row_normalize {
        ds.row_normalize_features();
    }
    if missing_features > 0.0 {
        *ds = zero_features(ds, missing_features, seed_stream(master_seed, "missing"));
    }
}

/// Rebuilds the deterministic fold split a graph-task run trained on.
pub fn graph_splits(
    ds: &GraphDataset,
    folds: usize,
    fold_index: usize,
    repeat: usize,
    master_seed: u64,
) -> Result<Splits> {
    let fold_seed = seed_stream(master_seed, &format!("folds-r{repeat}"));
    let plan = make_folds(ds.len(), folds, ds.class_labels(), fold_seed)?;
    plan.folds
        .get(fold_index)
        .cloned()
        .ok_or_else(|| anyhow!("fold index {fold_index} out of range for {folds} folds"))
}
