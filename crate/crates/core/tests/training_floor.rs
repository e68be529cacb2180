//! Feature-only oracle establishing the learnability floor of the
//! synthetic node task, and the GAT result against it.

use dsgnn_core::autodiff::{Activation, Matrix, ReadoutKind, Reduction, Tape};
use dsgnn_core::graph::{synthetic_node_task, SyntheticNodeParams};
use dsgnn_core::layers::HeadCombine;
use dsgnn_core::models::{ArchitectureSpec, ConvKind, OutputKind};
use dsgnn_core::training::{accuracy, train_run, LrSchedule, OptimKind, RunSettings, TrainData};
use dsgnn_core::{NodeDataset, TaskKind, Variant};

/// Plain multinomial logistic regression on raw features, trained with
/// full-batch gradient descent. Independent of the GNN implementation path.
fn logistic_regression_accuracy(ds: &NodeDataset, iters: usize, lr: f64) -> f64 {
    let d = ds.graph.feature_dim();
    let c = ds.num_classes;
    let mut w = Matrix::zeros(d, c);
    let train_classes: Vec<usize> = ds
        .splits
        .train
        .iter()
        .map(|&i| ds.labels[i] as usize)
        .collect();
    for _ in 0..iters {
        let tape = Tape::new();
        let wt = tape.leaf(w.clone(), true);
        let x = tape.leaf(ds.graph.features().clone(), false);
        let logits = x.matmul(&wt).gather_rows(&ds.splits.train);
        let loss = logits.cross_entropy_logits(&train_classes, Reduction::Mean);
        loss.backward();
        let grad = wt.grad().unwrap();
        for i in 0..w.len() {
            w.data_mut()[i] -= lr * grad.data()[i];
        }
    }
    let logits = ds.graph.features().matmul(&w);
    let pred: Vec<usize> = (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let truth: Vec<usize> = ds.labels.iter().map(|&l| l.max(0) as usize).collect();
    accuracy(&pred, &truth, &ds.splits.test)
}

fn majority_rate(ds: &NodeDataset, subset: &[usize]) -> f64 {
    let mut counts = vec![0usize; ds.num_classes];
    for &i in &ds.splits.train {
        counts[ds.labels[i] as usize] += 1;
    }
    let majority = counts.iter().enumerate().max_by_key(|(_, &c)| c).unwrap().0;
    subset
        .iter()
        .filter(|&&i| ds.labels[i] as usize == majority)
        .count() as f64
        / subset.len() as f64
}

#[test]
fn gat_beats_majority_rate_on_noisy_homophilous_task() {
    let ds = synthetic_node_task(&SyntheticNodeParams::new(600, 3, 0.9, 16, 1.0), 21);

    // features alone must already carry signal; this calibrates the task
    let floor = logistic_regression_accuracy(&ds, 150, 0.5);
    let majority = majority_rate(&ds, &ds.splits.test);
    assert!(
        floor > majority,
        "feature oracle {floor} does not beat majority {majority}; task miscalibrated"
    );

    let spec = ArchitectureSpec {
        task: TaskKind::Node,
        variant: Variant::Standard,
        conv: ConvKind::Gat,
        depth: 2,
        hidden_dim: 8,
        num_heads: 8,
        head_combine: HeadCombine::Concat,
        activation: Activation::Elu,
        readout: ReadoutKind::Max,
        pairnorm: None,
        output: OutputKind::Classification { num_classes: 3 },
        feature_dropout: 0.0,
        attention_dropout: 0.0,
        head_bias: true,
        conv_bias: false,
    };
    let rs = RunSettings {
        lr: 0.01,
        weight_decay: 0.0005,
        max_epochs: 150,
        batch_size: 0,
        schedule: LrSchedule::none(),
        optimizer: OptimKind::adam(),
        seed: 2,
    };
    let run = train_run(&spec, &TrainData::Node(&ds), &rs).unwrap();
    assert!(
        run.test_metric > majority,
        "2-layer GAT test accuracy {} not above majority rate {majority}",
        run.test_metric
    );
}
