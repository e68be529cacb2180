//! Training loops, the evaluation protocol, metrics, and diagnostics.

mod metrics;
mod optim;
mod protocol;

pub use metrics::{
    accuracy, col_diff, layer_diagnostics_graph, layer_diagnostics_node, rmse, row_diff,
    LayerDiagnostics, Metric,
};
pub use optim::{lr_at, optimizer_step, LrSchedule, OptimKind, OptimizerState};
pub use protocol::{
    cross_validate, grid_points, repeat_fixed_splits, GridPoint, SweepOutcome, SweepPlan,
    SweepRunRecord, VariantSummary,
};

use crate::autodiff::Tape;
use crate::graph::{GraphDataset, GraphTask, NodeDataset, Splits};
use crate::models::{model_loss, Model, ModelError, Predictions, TargetsRef};
use crate::seed_stream;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Fully resolved settings of a single training run (one grid point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub optimizer: OptimKind,
    pub seed: u64,
}

/// Protocol-level configuration: grids, depth candidates, repeat and fold
/// counts, and the missing-features proportion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub optimizer: OptimKind,
    pub lr_grid: Vec<f64>,
    pub weight_decay_grid: Vec<f64>,
    pub dropout_grid: Vec<f64>,
    pub depths: Vec<usize>,
    pub seed: u64,
    pub repeats: usize,
    pub folds: usize,
    /// Node tasks: proportion of val/test nodes whose features are zeroed.
    pub missing_features: f64,
    /// Upper bound on concurrently executing runs.
    pub jobs: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lr_grid.is_empty()
            || self.weight_decay_grid.is_empty()
            || self.dropout_grid.is_empty()
        {
            return Err(ModelError::InvalidSpec(
                "hyperparameter grids must be non-empty".into(),
            ));
        }
        if self.depths.is_empty() || self.depths.iter().any(|&d| d < 2) {
            return Err(ModelError::InvalidSpec(
                "depth candidates must all be >= 2".into(),
            ));
        }
        if self.repeats == 0 {
            return Err(ModelError::InvalidSpec("repeats must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.missing_features) {
            return Err(ModelError::InvalidSpec(
                "missing_features must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a single run produced: per-epoch curves, best-snapshot
/// metrics for all three splits, and the restored model.
#[derive(Debug)]
pub struct RunResult {
    pub settings: RunSettings,
    pub metric: Metric,
    pub train_metric: f64,
    pub val_metric: f64,
    pub test_metric: f64,
    pub epoch_train_loss: Vec<f64>,
    pub epoch_val_metric: Vec<f64>,
    /// Number of optimizer epochs applied at the selected snapshot
    /// (0 means the initial model).
    pub selected_epoch: usize,
    pub epochs_trained: usize,
    pub diverged: bool,
    pub wall_clock_secs: f64,
    /// Model with parameters restored to the best-validation snapshot.
    pub model: Model,
    /// Graph tasks: every dataset index that contributed a gradient,
    /// recorded for protocol audits.
    pub trained_indices: Vec<usize>,
}

/// Training input: a node dataset with fixed splits, or a graph dataset
/// with fold-local index splits.
pub enum TrainData<'a> {
    Node(&'a NodeDataset),
    Graph {
        ds: &'a GraphDataset,
        splits: &'a Splits,
    },
}

impl TrainData<'_> {
    pub fn metric(&self) -> Metric {
        match self {
            TrainData::Node(_) => Metric::Accuracy,
            TrainData::Graph { ds, .. } => match ds.task {
                GraphTask::Classification => Metric::Accuracy,
                GraphTask::Regression => Metric::Rmse,
            },
        }
    }

    fn feature_dim(&self) -> usize {
        match self {
            TrainData::Node(ds) => ds.graph.feature_dim(),
            TrainData::Graph { ds, .. } => ds.feature_dim(),
        }
    }
}

/// Per-split metrics of a model snapshot.
#[derive(Debug, Clone, Copy)]
pub struct SplitMetrics {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

fn node_targets(ds: &NodeDataset) -> Vec<usize> {
    // unlabeled nodes map to class 0; they are never indexed by a loss mask
    ds.labels.iter().map(|&l| l.max(0) as usize).collect()
}

/// Evaluates a node model on all three splits with one no-dropout forward.
pub fn eval_node(model: &Model, ds: &NodeDataset) -> SplitMetrics {
    let tape = Tape::new();
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let trace = model.forward_node(&tape, ds, false, &mut rng);
    let pred = match model.predict(&trace) {
        Predictions::Classes(c) => c,
        Predictions::Values(_) => unreachable!("node tasks are classification"),
    };
    let truth = node_targets(ds);
    SplitMetrics {
        train: accuracy(&pred, &truth, &ds.splits.train),
        val: accuracy(&pred, &truth, &ds.splits.val),
        test: accuracy(&pred, &truth, &ds.splits.test),
    }
}

/// Evaluates a graph model on one index list (a fold split).
pub fn eval_graph(model: &Model, ds: &GraphDataset, indices: &[usize]) -> f64 {
    assert!(!indices.is_empty(), "evaluating an empty split");
    let tape = Tape::new();
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let (trace, _) = model.forward_graph_indices(&tape, &ds.graphs, indices, false, &mut rng);
    let all: Vec<usize> = (0..indices.len()).collect();
    match model.predict(&trace) {
        Predictions::Classes(pred) => {
            let truth: Vec<usize> = indices
                .iter()
                .map(|&i| ds.class_labels().unwrap()[i])
                .collect();
            accuracy(&pred, &truth, &all)
        }
        Predictions::Values(pred) => {
            let truth: Vec<f64> = indices
                .iter()
                .map(|&i| ds.real_targets().unwrap()[i])
                .collect();
            rmse(&pred, &truth, &all)
        }
    }
}

/// Trains one model to `max_epochs`, tracking validation each epoch and
/// returning the metrics of the best-validation parameter snapshot.
///
/// Node tasks run full-batch; graph tasks shuffle the training indices into
/// block-diagonal mini-batches each epoch. A NaN training loss aborts the
/// run and flags it as diverged. Deterministic per seed.
pub fn train_run(
    spec: &crate::models::ArchitectureSpec,
    data: &TrainData,
    rs: &RunSettings,
) -> Result<RunResult, ModelError> {
    let start = Instant::now();
    let mut model = Model::build(spec, data.feature_dim(), rs.seed)?;
    let metric = data.metric();
    let mut optimizer = OptimizerState::new(
        rs.optimizer,
        rs.lr,
        rs.weight_decay,
        model.registry.values(),
    );
    let mut dropout_rng = ChaCha12Rng::seed_from_u64(seed_stream(rs.seed, "dropout"));
    let mut batch_rng = ChaCha12Rng::seed_from_u64(seed_stream(rs.seed, "batch"));

    let mut epoch_train_loss = Vec::with_capacity(rs.max_epochs);
    let mut epoch_val_metric = Vec::with_capacity(rs.max_epochs);
    let mut best: Option<(f64, usize, Vec<crate::autodiff::Matrix>)> = None;
    let mut diverged = false;
    let mut trained_indices: Vec<usize> = Vec::new();

    for epoch in 0..rs.max_epochs {
        optimizer.lr = lr_at(rs.lr, &rs.schedule, epoch);
        let epoch_loss = match data {
            TrainData::Node(ds) => {
                let tape = Tape::new();
                let trace = model.forward_node(&tape, ds, true, &mut dropout_rng);
                let targets = node_targets(ds);
                let loss = model_loss(
                    &model,
                    &trace,
                    TargetsRef::Classes(&targets),
                    &ds.splits.train,
                );
                let loss_value = loss.item();
                if loss_value.is_nan() {
                    diverged = true;
                } else {
                    loss.backward();
                    apply_gradients(&mut model, &mut optimizer, &trace.leaves);
                }
                loss_value
            }
            TrainData::Graph { ds, splits } => {
                let mut order = splits.train.to_vec();
                order.shuffle(&mut batch_rng);
                if epoch == 0 {
                    trained_indices = order.clone();
                    trained_indices.sort_unstable();
                }
                let mut total = 0.0;
                let mut seen = 0usize;
                for chunk in order.chunks(rs.batch_size.max(1)) {
                    let tape = Tape::new();
                    let (trace, _) = model.forward_graph_indices(
                        &tape,
                        &ds.graphs,
                        chunk,
                        true,
                        &mut dropout_rng,
                    );
                    let mask: Vec<usize> = (0..chunk.len()).collect();
                    let loss = match &ds.targets {
                        crate::graph::GraphTargets::Classes(all) => {
                            let classes: Vec<usize> = chunk.iter().map(|&i| all[i]).collect();
                            model_loss(&model, &trace, TargetsRef::Classes(&classes), &mask)
                        }
                        crate::graph::GraphTargets::Reals(all) => {
                            let reals: Vec<f64> = chunk.iter().map(|&i| all[i]).collect();
                            model_loss(&model, &trace, TargetsRef::Reals(&reals), &mask)
                        }
                    };
                    let loss_value = loss.item();
                    if loss_value.is_nan() {
                        diverged = true;
                        break;
                    }
                    loss.backward();
                    apply_gradients(&mut model, &mut optimizer, &trace.leaves);
                    total += loss_value * chunk.len() as f64;
                    seen += chunk.len();
                }
                if seen > 0 {
                    total / seen as f64
                } else {
                    f64::NAN
                }
            }
        };
        epoch_train_loss.push(epoch_loss);
        if diverged {
            break;
        }

        let val = match data {
            TrainData::Node(ds) => eval_node(&model, ds).val,
            TrainData::Graph { ds, splits } => eval_graph(&model, ds, &splits.val),
        };
        epoch_val_metric.push(val);
        let score = metric.score(val);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch + 1, model.registry.values().to_vec()));
        }
    }

    let (selected_epoch, snapshot) = match best {
        Some((_, e, snap)) => (e, snap),
        None => (0, model.registry.values().to_vec()),
    };
    model.registry.values_mut().clone_from_slice(&snapshot);
    let (train_metric, val_metric, test_metric) = match data {
        TrainData::Node(ds) => {
            let m = eval_node(&model, ds);
            (m.train, m.val, m.test)
        }
        TrainData::Graph { ds, splits } => (
            eval_graph(&model, ds, &splits.train),
            eval_graph(&model, ds, &splits.val),
            eval_graph(&model, ds, &splits.test),
        ),
    };

    let epochs_trained = epoch_train_loss.len();
    Ok(RunResult {
        settings: rs.clone(),
        metric,
        train_metric,
        val_metric,
        test_metric,
        epoch_train_loss,
        epoch_val_metric,
        selected_epoch,
        epochs_trained,
        diverged,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        model,
        trained_indices,
    })
}

fn apply_gradients(
    model: &mut Model,
    optimizer: &mut OptimizerState,
    leaves: &[crate::autodiff::Tensor],
) {
    let grads: Vec<crate::autodiff::Matrix> = leaves
        .iter()
        .enumerate()
        .map(|(i, leaf)| {
            leaf.grad().unwrap_or_else(|| {
                panic!(
                    "missing gradient for registered parameter {}",
                    model.registry.names()[i]
                )
            })
        })
        .collect();
    optimizer_step(optimizer, model.registry.values_mut(), &grads);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, ReadoutKind};
    use crate::graph::{synthetic_graph_task, synthetic_node_task, SyntheticNodeParams};
    use crate::layers::HeadCombine;
    use crate::models::{ArchitectureSpec, ConvKind, OutputKind, TaskKind, Variant};

    fn tiny_node_spec(depth: usize) -> ArchitectureSpec {
        ArchitectureSpec {
            task: TaskKind::Node,
            variant: Variant::Standard,
            conv: ConvKind::Gat,
            depth,
            hidden_dim: 4,
            num_heads: 2,
            head_combine: HeadCombine::Concat,
            activation: Activation::Elu,
            readout: ReadoutKind::Max,
            pairnorm: None,
            output: OutputKind::Classification { num_classes: 3 },
            feature_dropout: 0.0,
            attention_dropout: 0.0,
            head_bias: true,
            conv_bias: false,
        }
    }

    fn settings(max_epochs: usize, seed: u64) -> RunSettings {
        RunSettings {
            lr: 0.01,
            weight_decay: 0.0,
            max_epochs,
            batch_size: 16,
            schedule: LrSchedule::none(),
            optimizer: OptimKind::adam(),
            seed,
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model_metrics() {
        let ds = synthetic_node_task(&SyntheticNodeParams::new(620, 3, 0.9, 4, 0.2), 1);
        let out = train_run(&tiny_node_spec(2), &TrainData::Node(&ds), &settings(0, 3)).unwrap();
        assert_eq!(out.epochs_trained, 0);
        assert_eq!(out.selected_epoch, 0);
        assert!(!out.diverged);
        // metrics equal a fresh evaluation of the just-built model
        let fresh = Model::build(&tiny_node_spec(2), 4, 3).unwrap();
        let m = eval_node(&fresh, &ds);
        assert_eq!(out.val_metric, m.val);
    }

    #[test]
    fn separable_task_reaches_perfect_validation() {
        // homophily 1, noise 0: features are exact class means
        let ds = synthetic_node_task(&SyntheticNodeParams::new(620, 3, 1.0, 6, 0.0), 2);
        let out = train_run(&tiny_node_spec(2), &TrainData::Node(&ds), &settings(200, 1)).unwrap();
        assert!(
            out.val_metric == 1.0,
            "expected 100% val accuracy, got {}",
            out.val_metric
        );
        assert!(out.selected_epoch <= 200);
    }

    #[test]
    fn same_seed_gives_identical_loss_trajectories() {
        let ds = synthetic_node_task(&SyntheticNodeParams::new(560, 2, 0.8, 4, 0.5), 5);
        let mut spec = tiny_node_spec(2);
        spec.feature_dropout = 0.2;
        spec.attention_dropout = 0.2;
        spec.output = OutputKind::Classification { num_classes: 2 };
        let a = train_run(&spec, &TrainData::Node(&ds), &settings(20, 9)).unwrap();
        let b = train_run(&spec, &TrainData::Node(&ds), &settings(20, 9)).unwrap();
        assert_eq!(a.epoch_train_loss, b.epoch_train_loss);
        assert_eq!(a.test_metric, b.test_metric);
    }

    #[test]
    fn graph_training_records_only_train_indices() {
        let ds = synthetic_graph_task(20, crate::graph::GraphTask::Classification, 4);
        let splits = Splits {
            train: (0..12).collect(),
            val: (12..16).collect(),
            test: (16..20).collect(),
        };
        let spec = ArchitectureSpec {
            task: TaskKind::Graph,
            ..tiny_node_spec(2)
        };
        let out = train_run(
            &spec,
            &TrainData::Graph {
                ds: &ds,
                splits: &splits,
            },
            &settings(3, 7),
        )
        .unwrap();
        assert_eq!(out.trained_indices, splits.train);
        for i in &out.trained_indices {
            assert!(!splits.test.contains(i), "test index {i} used in training");
        }
    }
}
