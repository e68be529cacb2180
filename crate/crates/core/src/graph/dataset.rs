//! Node and graph datasets, split handling, fold plans, and the
//! missing-features masking protocol.

use super::{Csr, Graph, GraphError};
use crate::autodiff::Matrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::collections::HashSet;
use std::sync::Arc;

/// Sentinel label for unlabeled nodes.
pub const UNLABELED: i64 = -1;

/// Train/validation/test index lists. Pairwise disjoint by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn validate(&self, num_nodes: usize) -> Result<(), GraphError> {
        let names: [(&'static str, &[usize]); 3] = [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ];
        let mut seen: Vec<Option<&'static str>> = vec![None; num_nodes];
        for (name, indices) in names {
            for &i in indices {
                if i >= num_nodes {
                    return Err(GraphError::SplitIndexOutOfRange {
                        index: i,
                        num_nodes,
                    });
                }
                match seen[i] {
                    None => seen[i] = Some(name),
                    Some(prev) => {
                        return Err(GraphError::OverlappingSplits {
                            index: i,
                            a: prev,
                            b: name,
                        })
                    }
                }
            }
        }
        Ok(())
    }

    pub fn by_name(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// One big graph with per-node integer class labels and fixed splits:
/// the unit of semi-supervised node classification.
#[derive(Debug, Clone)]
pub struct NodeDataset {
    pub graph: Graph,
    /// One entry per node; [`UNLABELED`] marks nodes without a label.
    pub labels: Vec<i64>,
    pub num_classes: usize,
    pub splits: Splits,
}

impl NodeDataset {
    pub fn new(
        graph: Graph,
        labels: Vec<i64>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self, GraphError> {
        assert_eq!(labels.len(), graph.num_nodes(), "one label per node");
        splits.validate(graph.num_nodes())?;
        for &i in &splits.train {
            if labels[i] == UNLABELED {
                return Err(GraphError::UnlabeledTrainIndex { index: i });
            }
        }
        Ok(Self {
            graph,
            labels,
            num_classes,
            splits,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// Class labels of the given node indices; panics on unlabeled nodes.
    pub fn classes_of(&self, indices: &[usize]) -> Vec<usize> {
        indices
            .iter()
            .map(|&i| {
                let l = self.labels[i];
                assert!(l >= 0, "node {i} is unlabeled");
                l as usize
            })
            .collect()
    }

    /// L1-normalizes every feature row in place; zero rows are left alone.
    pub fn row_normalize_features(&mut self) {
        let features = self.graph.features_mut();
        for r in 0..features.rows() {
            let row = features.row_mut(r);
            let norm: f64 = row.iter().map(|v| v.abs()).sum();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
}

/// The prediction target kind of a [`GraphDataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphTask {
    Classification,
    Regression,
}

/// Per-graph targets: integer classes or real regression values.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphTargets {
    Classes(Vec<usize>),
    Reals(Vec<f64>),
}

/// Many small graphs with one target each: the unit of graph-level
/// classification and regression.
#[derive(Debug, Clone)]
pub struct GraphDataset {
    pub graphs: Vec<Graph>,
    pub targets: GraphTargets,
    pub task: GraphTask,
    pub num_classes: usize,
}

impl GraphDataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn class_labels(&self) -> Option<&[usize]> {
        match &self.targets {
            GraphTargets::Classes(c) => Some(c),
            GraphTargets::Reals(_) => None,
        }
    }

    pub fn real_targets(&self) -> Option<&[f64]> {
        match &self.targets {
            GraphTargets::Reals(r) => Some(r),
            GraphTargets::Classes(_) => None,
        }
    }
}

/// Replaces the feature rows of a uniformly sampled `proportion` of the
/// val and test nodes with zeros; training rows are never touched.
///
/// Returns a new dataset; the input is left unmodified. The sample is
/// deterministic per `rng_seed`.
pub fn zero_features(ds: &NodeDataset, proportion: f64, rng_seed: u64) -> NodeDataset {
    assert!(
        (0.0..=1.0).contains(&proportion),
        "proportion must be in [0, 1]"
    );
    let mut out = ds.clone();
    if proportion == 0.0 {
        return out;
    }
    let mut candidates: Vec<usize> = ds
        .splits
        .val
        .iter()
        .chain(ds.splits.test.iter())
        .copied()
        .collect();
    candidates.sort_unstable();
    let count = (proportion * candidates.len() as f64).round() as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    candidates.shuffle(&mut rng);
    let features = out.graph.features_mut();
    for &i in candidates.iter().take(count) {
        features.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
    }
    out
}

/// Cross-validation plan: per-fold train/val/test index triples.
///
/// Test partitions are disjoint across folds and cover the dataset exactly;
/// within a fold, 10% of the non-test indices (at least one) are carved out
/// for validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Splits>,
    pub num_folds: usize,
    pub seed: u64,
}

/// Builds a deterministic k-fold plan, stratified by label when given.
pub fn make_folds(
    dataset_size: usize,
    num_folds: usize,
    stratify_labels: Option<&[usize]>,
    seed: u64,
) -> Result<FoldPlan, GraphError> {
    assert!(num_folds >= 2, "need at least 2 folds");
    assert!(dataset_size >= num_folds, "dataset smaller than fold count");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; dataset_size];
    match stratify_labels {
        Some(labels) => {
            assert_eq!(labels.len(), dataset_size);
            let num_classes = labels.iter().max().map_or(0, |&c| c + 1);
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
            for (i, &c) in labels.iter().enumerate() {
                by_class[c].push(i);
            }
            for (class, members) in by_class.iter_mut().enumerate() {
                if !members.is_empty() && members.len() < num_folds {
                    return Err(GraphError::TooFewForStratification {
                        class: class as i64,
                        count: members.len(),
                        num_folds,
                    });
                }
                members.shuffle(&mut rng);
                for (k, &i) in members.iter().enumerate() {
                    fold_of[i] = k % num_folds;
                }
            }
        }
        None => {
            let mut order: Vec<usize> = (0..dataset_size).collect();
            order.shuffle(&mut rng);
            for (k, &i) in order.iter().enumerate() {
                fold_of[i] = k % num_folds;
            }
        }
    }

    let mut folds = Vec::with_capacity(num_folds);
    for f in 0..num_folds {
        let test: Vec<usize> = (0..dataset_size).filter(|&i| fold_of[i] == f).collect();
        let mut rest: Vec<usize> = (0..dataset_size).filter(|&i| fold_of[i] != f).collect();
        // 10% validation carve-out from the non-test indices, at least one.
        let val_count = ((rest.len() as f64 * 0.1).round() as usize).max(1);
        let val = match stratify_labels {
            Some(labels) => stratified_take(&mut rest, labels, val_count, &mut rng),
            None => {
                rest.shuffle(&mut rng);
                rest.split_off(rest.len() - val_count)
            }
        };
        let mut train = rest;
        train.sort_unstable();
        let mut val = val;
        val.sort_unstable();
        folds.push(Splits { train, val, test });
    }
    Ok(FoldPlan {
        folds,
        num_folds,
        seed,
    })
}

/// Removes and returns `count` indices from `pool`, spread over classes
/// round-robin so the carve-out is approximately stratified.
fn stratified_take(
    pool: &mut Vec<usize>,
    labels: &[usize],
    count: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<usize> {
    let num_classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for &i in pool.iter() {
        by_class[labels[i]].push(i);
    }
    for members in &mut by_class {
        members.shuffle(rng);
    }
    let mut taken = Vec::with_capacity(count);
    let mut class = 0;
    while taken.len() < count {
        if let Some(i) = by_class[class % num_classes].pop() {
            taken.push(i);
        } else if by_class.iter().all(Vec::is_empty) {
            break;
        }
        class += 1;
    }
    let taken_set: HashSet<usize> = taken.iter().copied().collect();
    pool.retain(|i| !taken_set.contains(i));
    taken
}

/// A block-diagonal merge of several graphs into one disconnected graph,
/// so a batch runs through a single forward pass.
#[derive(Debug, Clone)]
pub struct MergedBatch {
    pub csr: Arc<Csr>,
    pub features: Matrix,
    /// Node offsets per graph: graph `g` owns rows `offsets[g]..offsets[g+1]`.
    pub segments: Arc<Vec<usize>>,
}

/// Merges the selected graphs of a dataset into one block-diagonal batch.
pub fn merge_graphs(graphs: &[&Graph]) -> MergedBatch {
    assert!(!graphs.is_empty(), "cannot merge an empty batch");
    let feature_dim = graphs[0].feature_dim();
    let total_nodes: usize = graphs.iter().map(|g| g.num_nodes()).sum();
    let mut features = Matrix::zeros(total_nodes, feature_dim);
    let mut edges = Vec::new();
    let mut segments = Vec::with_capacity(graphs.len() + 1);
    segments.push(0);
    let mut base = 0;
    for g in graphs {
        assert_eq!(g.feature_dim(), feature_dim, "feature width mismatch");
        for v in 0..g.num_nodes() {
            features
                .row_mut(base + v)
                .copy_from_slice(g.features().row(v));
        }
        for (u, v) in g.edges().undirected_edges() {
            edges.push((base + u, base + v));
        }
        base += g.num_nodes();
        segments.push(base);
    }
    let csr = Csr::from_edges(total_nodes, &edges).expect("indices are in range by construction");
    MergedBatch {
        csr: Arc::new(csr),
        features,
        segments: Arc::new(segments),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_node_dataset(n: usize) -> NodeDataset {
        let graph = Graph::new(n, &[(0, 1)], Matrix::from_vec(n, 2, vec![1.0; n * 2])).unwrap();
        let labels = vec![0i64; n];
        let splits = Splits {
            train: vec![0, 1],
            val: (2..2 + (n - 2) / 2).collect(),
            test: (2 + (n - 2) / 2..n).collect(),
        };
        NodeDataset::new(graph, labels, 1, splits).unwrap()
    }

    #[test]
    fn zero_features_proportion_zero_is_identity() {
        let ds = toy_node_dataset(8);
        let out = zero_features(&ds, 0.0, 1);
        assert_eq!(out.graph.features(), ds.graph.features());
    }

    #[test]
    fn zero_features_proportion_one_zeroes_all_val_test() {
        let ds = toy_node_dataset(8);
        let out = zero_features(&ds, 1.0, 1);
        for &i in ds.splits.val.iter().chain(&ds.splits.test) {
            assert!(out.graph.features().row(i).iter().all(|&v| v == 0.0));
        }
        for &i in &ds.splits.train {
            assert_eq!(out.graph.features().row(i), ds.graph.features().row(i));
        }
        // Idempotent at proportion 1.
        let again = zero_features(&out, 1.0, 2);
        assert_eq!(again.graph.features(), out.graph.features());
    }

    #[test]
    fn zero_features_half_zeroes_exact_count() {
        let ds = toy_node_dataset(12); // 10 val+test nodes
        let out = zero_features(&ds, 0.5, 3);
        let zeroed = ds
            .splits
            .val
            .iter()
            .chain(&ds.splits.test)
            .filter(|&&i| out.graph.features().row(i).iter().all(|&v| v == 0.0))
            .count();
        assert_eq!(zeroed, 5);
    }

    #[test]
    fn folds_cover_and_are_disjoint() {
        let plan = make_folds(100, 10, None, 9).unwrap();
        let mut seen = [false; 100];
        for fold in &plan.folds {
            assert_eq!(fold.test.len(), 10);
            assert_eq!(fold.val.len(), 9);
            assert_eq!(fold.train.len(), 81);
            fold.validate(100).unwrap();
            for &i in &fold.test {
                assert!(!seen[i], "index {i} in two test partitions");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn leave_one_out_shape() {
        let plan = make_folds(10, 10, None, 0).unwrap();
        for fold in &plan.folds {
            assert_eq!(fold.test.len(), 1);
        }
    }

    #[test]
    fn folds_are_seed_deterministic() {
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let a = make_folds(60, 5, Some(&labels), 4).unwrap();
        let b = make_folds(60, 5, Some(&labels), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stratification_rejects_tiny_class() {
        let labels = vec![0, 0, 0, 0, 1];
        let err = make_folds(5, 3, Some(&labels), 0).unwrap_err();
        assert!(matches!(
            err,
            GraphError::TooFewForStratification { class: 1, .. }
        ));
    }

    #[test]
    fn overlapping_splits_rejected() {
        let graph = Graph::new(3, &[], Matrix::zeros(3, 1)).unwrap();
        let splits = Splits {
            train: vec![0],
            val: vec![1],
            test: vec![0],
        };
        let err = NodeDataset::new(graph, vec![0, 0, 0], 1, splits).unwrap_err();
        assert!(matches!(
            err,
            GraphError::OverlappingSplits { index: 0, .. }
        ));
    }

    #[test]
    fn merge_is_block_diagonal() {
        let g1 = Graph::new(2, &[(0, 1)], Matrix::from_vec(2, 1, vec![1.0, 2.0])).unwrap();
        let g2 = Graph::new(3, &[(0, 2)], Matrix::from_vec(3, 1, vec![3.0, 4.0, 5.0])).unwrap();
        let merged = merge_graphs(&[&g1, &g2]);
        assert_eq!(merged.segments.as_slice(), &[0, 2, 5]);
        assert_eq!(merged.csr.neighbors(0), &[1]);
        assert_eq!(merged.csr.neighbors(2), &[4]);
        assert_eq!(merged.features.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }
}
