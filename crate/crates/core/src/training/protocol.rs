//! The evaluation protocol: hyperparameter grid search inside k-fold
//! cross-validation (graph tasks) or fixed-split repeats (node tasks),
//! with depth selected on validation performance.
//!
//! Runs are embarrassingly parallel; each owns its model, tape, optimizer,
//! and RNG streams seeded from the master seed and its coordinates, and the
//! final aggregation is a deterministic sequential reduce, so parallel and
//! serial execution produce identical reports.

use super::{train_run, Metric, RunSettings, TrainConfig, TrainData};
use crate::graph::{make_folds, zero_features, GraphDataset, GraphError, NodeDataset};
use crate::models::{ArchitectureSpec, ModelError, PairNormConfig, Variant};
use crate::seed_stream;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One hyperparameter grid point. Enumeration order is lr-major, then
/// weight decay, then dropout; ties in selection break to the earlier
/// point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
}

/// Materializes the full grid in its canonical order.
pub fn grid_points(cfg: &TrainConfig) -> Vec<GridPoint> {
    let mut points = Vec::new();
    for &lr in &cfg.lr_grid {
        for &weight_decay in &cfg.weight_decay_grid {
            for &dropout in &cfg.dropout_grid {
                points.push(GridPoint {
                    index: points.len(),
                    lr,
                    weight_decay,
                    dropout,
                });
            }
        }
    }
    points
}

/// What to sweep: a spec template plus the (variant, pairnorm) rows of the
/// comparison table. Depth, dropout, variant, and pairnorm fields of the
/// template are overwritten per run.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub template: ArchitectureSpec,
    pub variants: Vec<(Variant, bool)>,
    pub pairnorm: PairNormConfig,
    pub cfg: TrainConfig,
}

/// Flat per-run record, one per trained model.
#[derive(Debug, Clone)]
pub struct SweepRunRecord {
    pub run_id: usize,
    pub variant: Variant,
    pub pairnorm: bool,
    pub depth: usize,
    pub seed: u64,
    pub repeat: usize,
    pub fold: Option<usize>,
    pub grid: GridPoint,
    pub metric: Metric,
    pub train_value: f64,
    pub val_value: f64,
    pub test_value: f64,
    pub epochs_trained: usize,
    pub selected_epoch: usize,
    pub diverged: bool,
}

/// One comparison-table row: the winning depth and its test statistics.
#[derive(Debug, Clone)]
pub struct VariantSummary {
    pub variant: Variant,
    pub pairnorm: bool,
    pub metric: Metric,
    pub best_depth: usize,
    pub test_mean: f64,
    pub test_sd: f64,
    pub val_mean: f64,
    pub selected_runs: usize,
    pub total_runs: usize,
    pub diverged_runs: usize,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub records: Vec<SweepRunRecord>,
    pub summaries: Vec<VariantSummary>,
}

/// Sample mean and (n-1)-denominator standard deviation; sd is 0 for n < 2.
pub fn mean_and_sample_sd(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty(), "aggregating an empty sample");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Descriptor {
    run_id: usize,
    variant: Variant,
    pairnorm: bool,
    depth: usize,
    repeat: usize,
    fold: Option<usize>,
    grid: GridPoint,
    seed: u64,
}

fn spec_for(plan: &SweepPlan, d: &Descriptor) -> ArchitectureSpec {
    ArchitectureSpec {
        variant: d.variant,
        depth: d.depth,
        feature_dropout: d.grid.dropout,
        attention_dropout: d.grid.dropout,
        pairnorm: d.pairnorm.then_some(plan.pairnorm),
        ..plan.template.clone()
    }
}

fn settings_for(cfg: &TrainConfig, d: &Descriptor) -> RunSettings {
    RunSettings {
        lr: d.grid.lr,
        weight_decay: d.grid.weight_decay,
        max_epochs: cfg.max_epochs,
        batch_size: cfg.batch_size,
        schedule: cfg.schedule,
        optimizer: cfg.optimizer,
        seed: d.seed,
    }
}

fn execute<F>(
    descriptors: &[Descriptor],
    jobs: usize,
    run: F,
) -> Result<Vec<SweepRunRecord>, ProtocolError>
where
    F: Fn(&Descriptor) -> Result<SweepRunRecord, ProtocolError> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool construction");
    pool.install(|| descriptors.par_iter().map(run).collect())
}

fn record_of(d: &Descriptor, result: super::RunResult) -> SweepRunRecord {
    SweepRunRecord {
        run_id: d.run_id,
        variant: d.variant,
        pairnorm: d.pairnorm,
        depth: d.depth,
        seed: d.seed,
        repeat: d.repeat,
        fold: d.fold,
        grid: d.grid,
        metric: result.metric,
        train_value: result.train_metric,
        val_value: result.val_metric,
        test_value: result.test_metric,
        epochs_trained: result.epochs_trained,
        selected_epoch: result.selected_epoch,
        diverged: result.diverged,
    }
}

/// 10-fold-style cross-validation with inner grid search.
///
/// For every (variant, depth, repeat, fold) the grid point with the best
/// fold-validation metric is selected and its test metric contributes to
/// the depth's aggregate; each variant then reports the depth with the best
/// mean validation metric. Fold assignments are reshuffled per repeat.
/// Diverged runs are excluded from selection and aggregation but counted.
pub fn cross_validate(ds: &GraphDataset, plan: &SweepPlan) -> Result<SweepOutcome, ProtocolError> {
    plan.cfg.validate()?;
    let cfg = &plan.cfg;
    let grid = grid_points(cfg);
    let labels = ds.class_labels();

    let mut fold_plans = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let fold_seed = seed_stream(cfg.seed, &format!("folds-r{r}"));
        fold_plans.push(make_folds(ds.len(), cfg.folds, labels, fold_seed)?);
    }

    let mut descriptors = Vec::new();
    for &(variant, pairnorm) in &plan.variants {
        for &depth in &cfg.depths {
            for repeat in 0..cfg.repeats {
                for fold in 0..cfg.folds {
                    for g in &grid {
                        descriptors.push(Descriptor {
                            run_id: descriptors.len(),
                            variant,
                            pairnorm,
                            depth,
                            repeat,
                            fold: Some(fold),
                            grid: *g,
                            seed: seed_stream(cfg.seed, &format!("r{repeat}-f{fold}")),
                        });
                    }
                }
            }
        }
    }

    let records = execute(&descriptors, cfg.jobs, |d| {
        let splits = &fold_plans[d.repeat].folds[d.fold.expect("cv runs carry a fold")];
        let spec = spec_for(plan, d);
        let result = train_run(
            &spec,
            &TrainData::Graph { ds, splits },
            &settings_for(cfg, d),
        )?;
        Ok(record_of(d, result))
    })?;

    let summaries = summarize(&records, &plan.variants, cfg, SelectionScope::PerFold);
    Ok(SweepOutcome { records, summaries })
}

/// Fixed-split protocol for node datasets: every (depth, grid) config runs
/// `repeats` seeds; the config with the best mean validation accuracy wins
/// and its test accuracies are reported as mean and sd.
///
/// A nonzero `missing_features` proportion zeroes the sampled val/test
/// feature rows once, deterministically, before any training.
pub fn repeat_fixed_splits(
    ds: &NodeDataset,
    plan: &SweepPlan,
) -> Result<SweepOutcome, ProtocolError> {
    plan.cfg.validate()?;
    let cfg = &plan.cfg;
    let masked;
    let data = if cfg.missing_features > 0.0 {
        masked = zero_features(ds, cfg.missing_features, seed_stream(cfg.seed, "missing"));
        &masked
    } else {
        ds
    };

    let grid = grid_points(cfg);
    let mut descriptors = Vec::new();
    for &(variant, pairnorm) in &plan.variants {
        for &depth in &cfg.depths {
            for g in &grid {
                for repeat in 0..cfg.repeats {
                    descriptors.push(Descriptor {
                        run_id: descriptors.len(),
                        variant,
                        pairnorm,
                        depth,
                        repeat,
                        fold: None,
                        grid: *g,
                        seed: seed_stream(cfg.seed, &format!("r{repeat}")),
                    });
                }
            }
        }
    }

    let records = execute(&descriptors, cfg.jobs, |d| {
        let spec = spec_for(plan, d);
        let result = train_run(&spec, &TrainData::Node(data), &settings_for(cfg, d))?;
        Ok(record_of(d, result))
    })?;

    let summaries = summarize(
        &records,
        &plan.variants,
        cfg,
        SelectionScope::MeanOverRepeats,
    );
    Ok(SweepOutcome { records, summaries })
}

#[derive(Clone, Copy, PartialEq)]
enum SelectionScope {
    /// CV: grid selection happens inside each (depth, repeat, fold) cell.
    PerFold,
    /// Fixed splits: one (depth, grid) config is selected by mean
    /// validation over repeats.
    MeanOverRepeats,
}

fn summarize(
    records: &[SweepRunRecord],
    variants: &[(Variant, bool)],
    cfg: &TrainConfig,
    scope: SelectionScope,
) -> Vec<VariantSummary> {
    let grid_len = cfg.lr_grid.len() * cfg.weight_decay_grid.len() * cfg.dropout_grid.len();
    let mut summaries = Vec::new();
    for &(variant, pairnorm) in variants {
        let of_variant: Vec<&SweepRunRecord> = records
            .iter()
            .filter(|r| r.variant == variant && r.pairnorm == pairnorm)
            .collect();
        if of_variant.is_empty() {
            continue;
        }
        let metric = of_variant[0].metric;
        let diverged_runs = of_variant.iter().filter(|r| r.diverged).count();

        // candidate -> (val score used for selection, test values backing it)
        let mut candidates: Vec<(usize, f64, f64, Vec<f64>)> = Vec::new();
        match scope {
            SelectionScope::PerFold => {
                for &depth in &cfg.depths {
                    let mut selected_tests = Vec::new();
                    let mut selected_vals = Vec::new();
                    for repeat in 0..cfg.repeats {
                        for fold in 0..cfg.folds {
                            let mut best: Option<&SweepRunRecord> = None;
                            for r in of_variant.iter().filter(|r| {
                                r.depth == depth
                                    && r.repeat == repeat
                                    && r.fold == Some(fold)
                                    && !r.diverged
                            }) {
                                // strictly-better keeps the earliest grid point on ties
                                if best.is_none_or(|b| {
                                    metric.score(r.val_value) > metric.score(b.val_value)
                                }) {
                                    best = Some(r);
                                }
                            }
                            if let Some(r) = best {
                                selected_tests.push(r.test_value);
                                selected_vals.push(r.val_value);
                            }
                        }
                    }
                    if !selected_tests.is_empty() {
                        let (val_mean, _) = mean_and_sample_sd(&selected_vals);
                        candidates.push((depth, metric.score(val_mean), val_mean, selected_tests));
                    }
                }
            }
            SelectionScope::MeanOverRepeats => {
                for &depth in &cfg.depths {
                    for g in 0..grid_len {
                        let runs: Vec<&&SweepRunRecord> = of_variant
                            .iter()
                            .filter(|r| r.depth == depth && r.grid.index == g && !r.diverged)
                            .collect();
                        if runs.is_empty() {
                            continue;
                        }
                        let vals: Vec<f64> = runs.iter().map(|r| r.val_value).collect();
                        let tests: Vec<f64> = runs.iter().map(|r| r.test_value).collect();
                        let (val_mean, _) = mean_and_sample_sd(&vals);
                        candidates.push((depth, metric.score(val_mean), val_mean, tests));
                    }
                }
            }
        }

        if let Some((best_depth, _, val_mean, tests)) =
            candidates
                .into_iter()
                .reduce(|best, c| if c.1 > best.1 { c } else { best })
        {
            let (test_mean, test_sd) = mean_and_sample_sd(&tests);
            summaries.push(VariantSummary {
                variant,
                pairnorm,
                metric,
                best_depth,
                test_mean,
                test_sd,
                val_mean,
                selected_runs: tests.len(),
                total_runs: of_variant.len(),
                diverged_runs,
            });
        }
    }
    summaries
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, ReadoutKind};
    use crate::graph::{synthetic_graph_task, synthetic_node_task, GraphTask, SyntheticNodeParams};
    use crate::layers::HeadCombine;
    use crate::models::{ConvKind, OutputKind, TaskKind};
    use crate::training::{LrSchedule, OptimKind};

    fn graph_plan(depths: Vec<usize>, folds: usize, repeats: usize) -> SweepPlan {
        SweepPlan {
            template: ArchitectureSpec {
                task: TaskKind::Graph,
                variant: Variant::Standard,
                conv: ConvKind::Gat,
                depth: 2,
                hidden_dim: 4,
                num_heads: 2,
                head_combine: HeadCombine::Concat,
                activation: Activation::Relu,
                readout: ReadoutKind::Max,
                pairnorm: None,
                output: OutputKind::Classification { num_classes: 3 },
                feature_dropout: 0.0,
                attention_dropout: 0.0,
                head_bias: true,
                conv_bias: false,
            },
            variants: vec![(Variant::Standard, false)],
            pairnorm: PairNormConfig::default(),
            cfg: TrainConfig {
                max_epochs: 5,
                batch_size: 16,
                schedule: LrSchedule::none(),
                optimizer: OptimKind::adam(),
                lr_grid: vec![0.01],
                weight_decay_grid: vec![0.0],
                dropout_grid: vec![0.0],
                depths,
                seed: 7,
                repeats,
                folds,
                missing_features: 0.0,
                jobs: 2,
            },
        }
    }

    #[test]
    fn two_folds_one_repeat_grid_of_one_gives_two_runs() {
        let ds = synthetic_graph_task(24, GraphTask::Classification, 3);
        let out = cross_validate(&ds, &graph_plan(vec![2], 2, 1)).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.summaries.len(), 1);
        assert_eq!(out.summaries[0].selected_runs, 2);
    }

    #[test]
    fn aggregation_matches_hand_arithmetic() {
        let (mean, sd) = mean_and_sample_sd(&[0.7, 0.8]);
        assert!((mean - 0.75).abs() < 1e-12);
        assert!((sd - 0.0707).abs() < 1e-4);
    }

    #[test]
    fn test_indices_never_trained_on() {
        let ds = synthetic_graph_task(30, GraphTask::Classification, 5);
        let plan = graph_plan(vec![2], 3, 1);
        let fold_plan = make_folds(
            30,
            3,
            ds.class_labels(),
            seed_stream(plan.cfg.seed, "folds-r0"),
        )
        .unwrap();
        for splits in &fold_plan.folds {
            let spec = ArchitectureSpec {
                variant: Variant::Standard,
                depth: 2,
                ..plan.template.clone()
            };
            let rs = RunSettings {
                lr: 0.01,
                weight_decay: 0.0,
                max_epochs: 2,
                batch_size: 8,
                schedule: LrSchedule::none(),
                optimizer: OptimKind::adam(),
                seed: 1,
            };
            let result = train_run(&spec, &TrainData::Graph { ds: &ds, splits }, &rs).unwrap();
            for i in &result.trained_indices {
                assert!(!splits.test.contains(i));
                assert!(!splits.val.contains(i));
            }
        }
    }

    #[test]
    fn grid_selection_prefers_higher_validation() {
        // two grid points identical except lr; selection must pick by val,
        // tie-breaking to the earlier index
        let ds = synthetic_node_task(&SyntheticNodeParams::new(620, 3, 0.9, 4, 0.3), 2);
        let mut plan = graph_plan(vec![2], 2, 1);
        plan.template.task = TaskKind::Node;
        plan.template.activation = Activation::Elu;
        plan.cfg.lr_grid = vec![0.01, 0.0];
        plan.cfg.max_epochs = 30;
        let out = repeat_fixed_splits(&ds, &plan).unwrap();
        assert_eq!(out.records.len(), 2);
        let summary = &out.summaries[0];
        // lr 0 never updates parameters; trained lr 0.01 should win on val
        let lr0 = &out.records[0];
        let lr_none = &out.records[1];
        assert!(lr0.val_value >= lr_none.val_value);
        assert!((summary.test_mean - lr0.test_value).abs() < 1e-12);
    }

    #[test]
    fn parallel_and_serial_sweeps_agree() {
        let ds = synthetic_graph_task(20, GraphTask::Classification, 9);
        let mut plan = graph_plan(vec![2, 3], 2, 1);
        plan.cfg.max_epochs = 3;
        plan.cfg.jobs = 1;
        let serial = cross_validate(&ds, &plan).unwrap();
        plan.cfg.jobs = 4;
        let parallel = cross_validate(&ds, &plan).unwrap();
        assert_eq!(serial.records.len(), parallel.records.len());
        for (a, b) in serial.records.iter().zip(&parallel.records) {
            assert_eq!(a.run_id, b.run_id);
            assert_eq!(a.test_value, b.test_value);
            assert_eq!(a.val_value, b.val_value);
        }
        assert_eq!(
            serial.summaries[0].best_depth,
            parallel.summaries[0].best_depth
        );
        assert_eq!(
            serial.summaries[0].test_mean,
            parallel.summaries[0].test_mean
        );
    }
}
