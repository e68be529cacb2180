//! Evaluation metrics and the over-smoothing diagnostics row-diff/col-diff.

use crate::autodiff::{Matrix, Tape};
use crate::graph::{merge_graphs, Graph, GraphDataset, NodeDataset};
use crate::models::Model;
use crate::seed_stream;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Which metric a task reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Rmse,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Rmse => "rmse",
        }
    }

    /// Higher-is-better ordering key.
    pub fn score(self, value: f64) -> f64 {
        match self {
            Metric::Accuracy => value,
            Metric::Rmse => -value,
        }
    }
}

/// Fraction of correct predictions over the subset.
pub fn accuracy(pred: &[usize], truth: &[usize], subset: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "prediction/label length mismatch");
    assert!(!subset.is_empty(), "accuracy over an empty subset");
    let correct = subset.iter().filter(|&&i| pred[i] == truth[i]).count();
    correct as f64 / subset.len() as f64
}

/// Root mean squared error over the subset.
pub fn rmse(pred: &[f64], target: &[f64], subset: &[usize]) -> f64 {
    assert_eq!(
        pred.len(),
        target.len(),
        "prediction/target length mismatch"
    );
    assert!(!subset.is_empty(), "rmse over an empty subset");
    let mse: f64 = subset
        .iter()
        .map(|&i| (pred[i] - target[i]) * (pred[i] - target[i]))
        .sum::<f64>()
        / subset.len() as f64;
    mse.sqrt()
}

/// Mean Euclidean distance over all unordered row pairs: the node-wise
/// over-smoothing diagnostic. Direct O(N^2 d) computation.
pub fn row_diff(h: &Matrix) -> f64 {
    let n = h.rows();
    assert!(n >= 2, "row_diff needs at least 2 rows");
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = h
                .row(i)
                .iter()
                .zip(h.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += d2.sqrt();
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// Mean Euclidean distance over all pairs of L1-normalized columns: the
/// feature-wise over-smoothing diagnostic. Zero columns stay zero.
pub fn col_diff(h: &Matrix) -> f64 {
    let d = h.cols();
    assert!(d >= 2, "col_diff needs at least 2 columns");
    let n = h.rows();
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|c| (0..n).map(|r| h.get(r, c)).collect())
        .collect();
    for col in &mut cols {
        let norm: f64 = col.iter().map(|v| v.abs()).sum();
        if norm > 0.0 {
            col.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let mut total = 0.0;
    for i in 0..d {
        for j in i + 1..d {
            let d2: f64 = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += d2.sqrt();
        }
    }
    total / (d * (d - 1) / 2) as f64
}

/// Both diagnostics for the output of one conv layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    pub row_diff: f64,
    pub col_diff: f64,
}

/// Runs a no-dropout forward over the node dataset and computes both
/// diagnostics for every conv layer's output.
pub fn layer_diagnostics_node(model: &Model, ds: &NodeDataset) -> Vec<LayerDiagnostics> {
    let tape = Tape::new();
    let mut rng = ChaCha12Rng::seed_from_u64(seed_stream(0, "diagnostics"));
    let trace = model.forward_node(&tape, ds, false, &mut rng);
    diagnostics_of(trace.layer_outputs.iter().map(|t| t.value()))
}

/// Diagnostics over a bounded merged sample of a graph dataset (row_diff is
/// quadratic in node count, so the sample is capped).
pub fn layer_diagnostics_graph(
    model: &Model,
    ds: &GraphDataset,
    max_graphs: usize,
) -> Vec<LayerDiagnostics> {
    let take = ds.len().min(max_graphs.max(1));
    let selected: Vec<&Graph> = ds.graphs[..take].iter().collect();
    let batch = merge_graphs(&selected);
    let tape = Tape::new();
    let mut rng = ChaCha12Rng::seed_from_u64(seed_stream(0, "diagnostics"));
    let trace = model.forward_graph(&tape, &batch, false, &mut rng);
    diagnostics_of(trace.layer_outputs.iter().map(|t| t.value()))
}

fn diagnostics_of(layers: impl Iterator<Item = Matrix>) -> Vec<LayerDiagnostics> {
    layers
        .enumerate()
        .map(|(l, h)| LayerDiagnostics {
            layer: l + 1,
            row_diff: row_diff(&h),
            col_diff: col_diff(&h),
        })
        .collect()
}
