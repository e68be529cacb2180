//! `train`: one run from a config whose grids are all singletons.

use super::write_file;
use crate::config::{read_config, ExperimentConfig};
use crate::data::{
    graph_splits, load_from_config, preprocess_node, GraphSplitProvenance, LoadedDataset,
    Provenance,
};
use crate::output::results_csv;
use anyhow::{anyhow, Result};
use clap::Args;
use dsgnn_core::models::{save_checkpoint, ArchitectureSpec};
use dsgnn_core::training::{
    train_run, GridPoint, RunResult, RunSettings, SweepRunRecord, TrainData,
};
use std::path::PathBuf;

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// L1-normalize node feature rows before training.
    #[arg(long)]
    row_normalize: bool,
}

fn singleton<T: Copy>(values: &[T], what: &str) -> Result<T> {
    if values.len() != 1 {
        return Err(anyhow!(
            "train expects a single {what}; found {} (use `sweep` for grids)",
            values.len()
        ));
    }
    Ok(values[0])
}

pub struct PreparedRun {
    pub cfg: ExperimentConfig,
    pub spec: ArchitectureSpec,
    pub settings: RunSettings,
    pub data: LoadedDataset,
    pub graph_split: Option<(dsgnn_core::graph::Splits, GraphSplitProvenance)>,
    pub seed: u64,
    pub seed_from_env: bool,
    pub row_normalize: bool,
}

/// Resolves config, dataset, preprocessing, and the single grid point.
pub fn prepare(args: &TrainArgs) -> Result<PreparedRun> {
    let cfg = read_config(&args.config)?;
    let (seed, seed_from_env) = crate::effective_seed(cfg.seed);
    let lr = singleton(&cfg.training.lr, "lr")?;
    let weight_decay = singleton(&cfg.training.weight_decay, "weight_decay")?;
    let dropout = singleton(&cfg.training.dropout, "dropout")?;
    let depth = singleton(&cfg.training.depths, "depth")?;
    if cfg.model.variants.len() != 1 {
        return Err(anyhow!(
            "train expects a single variant; use `sweep` for comparisons"
        ));
    }
    let row = cfg.model.variants[0];
    let row_normalize = args.row_normalize || cfg.training.row_normalize_features;

    let mut data = load_from_config(&cfg.dataset)?;
    if let LoadedDataset::Node(ds) = &mut data {
        preprocess_node(ds, row_normalize, cfg.training.missing_features, seed);
    }

    let mut spec = cfg.spec_template(data.output_kind());
    spec.variant = row.variant;
    spec.depth = depth;
    spec.feature_dropout = dropout;
    spec.attention_dropout = dropout;
    spec.pairnorm = row.pairnorm.then(|| cfg.pairnorm_config());

    let graph_split = match &data {
        LoadedDataset::Node(_) => None,
        LoadedDataset::Graph(ds) => {
            let provenance = GraphSplitProvenance {
                folds: cfg.training.folds,
                fold_index: 0,
                repeat: 0,
            };
            let splits = graph_splits(ds, provenance.folds, 0, 0, seed)?;
            Some((splits, provenance))
        }
    };

    let settings = RunSettings {
        lr,
        weight_decay,
        max_epochs: cfg.training.max_epochs,
        batch_size: cfg.training.batch_size,
        schedule: cfg.lr_schedule(),
        optimizer: cfg.optim_kind(),
        seed,
    };
    Ok(PreparedRun {
        cfg,
        spec,
        settings,
        data,
        graph_split,
        seed,
        seed_from_env,
        row_normalize,
    })
}

pub fn record_of(run: &RunResult, prepared: &PreparedRun, fold: Option<usize>) -> SweepRunRecord {
    SweepRunRecord {
        run_id: 0,
        variant: prepared.spec.variant,
        pairnorm: prepared.spec.pairnorm.is_some(),
        depth: prepared.spec.depth,
        seed: prepared.seed,
        repeat: 0,
        fold,
        grid: GridPoint {
            index: 0,
            lr: prepared.settings.lr,
            weight_decay: prepared.settings.weight_decay,
            dropout: prepared.spec.feature_dropout,
        },
        metric: run.metric,
        train_value: run.train_metric,
        val_value: run.val_metric,
        test_value: run.test_metric,
        epochs_trained: run.epochs_trained,
        selected_epoch: run.selected_epoch,
        diverged: run.diverged,
    }
}

pub fn provenance_of(prepared: &PreparedRun) -> Provenance {
    Provenance {
        dataset: serde_json::to_value(&prepared.cfg.dataset).expect("dataset config serializes"),
        row_normalize: prepared.row_normalize,
        missing_features: prepared.cfg.training.missing_features,
        master_seed: prepared.seed,
        graph_split: prepared.graph_split.as_ref().map(|(_, p)| p.clone()),
    }
}

pub fn run(args: TrainArgs) -> Result<u8> {
    let prepared = prepare(&args)?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| prepared.cfg.output_dir.clone().map(PathBuf::from))
        .ok_or_else(|| anyhow!("no output directory: pass --out or set output_dir"))?;

    let result = match (&prepared.data, &prepared.graph_split) {
        (LoadedDataset::Node(ds), _) => {
            train_run(&prepared.spec, &TrainData::Node(ds), &prepared.settings)?
        }
        (LoadedDataset::Graph(ds), Some((splits, _))) => train_run(
            &prepared.spec,
            &TrainData::Graph { ds, splits },
            &prepared.settings,
        )?,
        (LoadedDataset::Graph(_), None) => unreachable!("graph data always carries a split"),
    };

    let fold = prepared.graph_split.as_ref().map(|(_, p)| p.fold_index);
    let record = record_of(&result, &prepared, fold);
    write_file(&out_dir.join("results.csv"), &results_csv(&[record]))?;

    let provenance = provenance_of(&prepared);
    save_checkpoint(
        &result.model,
        &out_dir.join("checkpoint"),
        &serde_json::to_value(&provenance)?,
    )?;

    let resolved = serde_json::json!({
        "config": prepared.cfg,
        "effective_seed": prepared.seed,
        "seed_from_env": prepared.seed_from_env,
        "row_normalize_effective": prepared.row_normalize,
    });
    write_file(
        &out_dir.join("resolved_config.json"),
        &serde_json::to_string_pretty(&resolved)?,
    )?;

    println!(
        "{} train {:.6} val {:.6} test {:.6} (selected epoch {}, trained {})",
        result.metric.as_str(),
        result.train_metric,
        result.val_metric,
        result.test_metric,
        result.selected_epoch,
        result.epochs_trained,
    );
    if result.diverged {
        eprintln!("run diverged (NaN loss)");
        return Ok(2);
    }
    Ok(0)
}
