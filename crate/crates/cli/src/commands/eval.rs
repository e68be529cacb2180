//! `eval`: metric of a checkpoint on one split, reproducing the exact
//! preprocessing and split derivation recorded at training time.

use crate::data::{graph_splits, load_from_path, preprocess_node, LoadedDataset, Provenance};
use anyhow::{anyhow, Result};
use clap::Args;
use dsgnn_core::models::load_checkpoint;
use dsgnn_core::training::{eval_graph, eval_node};
use std::path::PathBuf;

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint path prefix (without the .json/.params extension).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Node dataset directory or graph dataset JSONL file.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: String,
    /// Emit machine-readable JSON instead of plain text.
    #[arg(long)]
    json: bool,
}

pub fn run(args: EvalArgs) -> Result<u8> {
    let (model, extra) = load_checkpoint(&args.checkpoint)?;
    let provenance: Provenance = serde_json::from_value(extra)
        .map_err(|e| anyhow!("checkpoint provenance unreadable: {e}"))?;
    let mut data = load_from_path(&args.dataset)?;

    let (metric, value) = match &mut data {
        LoadedDataset::Node(ds) => {
            preprocess_node(
                ds,
                provenance.row_normalize,
                provenance.missing_features,
                provenance.master_seed,
            );
            if ds
                .splits
                .by_name(&args.split)
                .is_none_or(<[usize]>::is_empty)
            {
                return Err(anyhow!("split {:?} absent or empty in dataset", args.split));
            }
            let metrics = eval_node(&model, ds);
            let value = match args.split.as_str() {
                "train" => metrics.train,
                "val" => metrics.val,
                "test" => metrics.test,
                other => return Err(anyhow!("unknown split {other:?}")),
            };
            ("accuracy", value)
        }
        LoadedDataset::Graph(ds) => {
            let sp = provenance
                .graph_split
                .as_ref()
                .ok_or_else(|| anyhow!("checkpoint carries no graph split provenance"))?;
            let splits = graph_splits(
                ds,
                sp.folds,
                sp.fold_index,
                sp.repeat,
                provenance.master_seed,
            )?;
            let indices = splits
                .by_name(&args.split)
                .ok_or_else(|| anyhow!("unknown split {:?}", args.split))?;
            if indices.is_empty() {
                return Err(anyhow!("split {:?} is empty", args.split));
            }
            let value = eval_graph(&model, ds, indices);
            let metric = match ds.task {
                dsgnn_core::graph::GraphTask::Classification => "accuracy",
                dsgnn_core::graph::GraphTask::Regression => "rmse",
            };
            (metric, value)
        }
    };

    if args.json {
        println!(
            "{}",
            serde_json::json!({"metric": metric, "value": value, "split": args.split})
        );
    } else {
        println!("{metric} {value}");
    }
    Ok(0)
}
