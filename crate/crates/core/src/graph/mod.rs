//! Graph and dataset representation: CSR adjacency, node/graph datasets,
//! file loaders, synthetic generators, normalization, splits, and the
//! missing-features masking protocol.

mod csr;
mod dataset;
mod io;
mod synthetic;

pub use csr::Csr;
pub use dataset::{
    make_folds, merge_graphs, zero_features, FoldPlan, GraphDataset, GraphTargets, GraphTask,
    MergedBatch, NodeDataset, Splits, UNLABELED,
};
pub use io::{load_graph_dataset, load_node_dataset, save_graph_dataset, save_node_dataset};
pub use synthetic::{synthetic_graph_task, synthetic_node_task, SyntheticNodeParams};

use crate::autodiff::Matrix;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node index {index} out of range for {num_nodes} nodes")]
    NodeIndexOutOfRange { index: usize, num_nodes: usize },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("overlapping splits: index {index} appears in both {a} and {b}")]
    OverlappingSplits {
        index: usize,
        a: &'static str,
        b: &'static str,
    },
    #[error("split index {index} out of range for {num_nodes} nodes")]
    SplitIndexOutOfRange { index: usize, num_nodes: usize },
    #[error("train index {index} has no label")]
    UnlabeledTrainIndex { index: usize },
    #[error("feature width mismatch: expected {expected}, got {got}")]
    FeatureWidthMismatch { expected: usize, got: usize },
    #[error("cannot stratify: class {class} has {count} members for {num_folds} folds")]
    TooFewForStratification {
        class: i64,
        count: usize,
        num_folds: usize,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// An undirected attributed graph: symmetrized CSR edges plus a dense
/// node-feature matrix.
#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    edges: Arc<Csr>,
    features: Matrix,
}

impl Graph {
    /// Builds a graph from an edge list; edges are mirrored and deduplicated,
    /// self-loops in the input are dropped.
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Matrix,
    ) -> Result<Self, GraphError> {
        assert_eq!(
            features.rows(),
            num_nodes,
            "feature rows must equal num_nodes"
        );
        let csr = Csr::from_edges(num_nodes, edges)?;
        Ok(Self {
            num_nodes,
            edges: Arc::new(csr),
            features,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn edges(&self) -> &Arc<Csr> {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut Matrix {
        &mut self.features
    }

    pub fn self_loops_included(&self) -> bool {
        self.edges.has_self_loops()
    }

    /// Longest shortest-path distance over the graph (BFS from every node).
    /// Disconnected pairs are ignored.
    pub fn diameter(&self) -> usize {
        let n = self.num_nodes;
        let mut best = 0;
        let mut dist = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        for s in 0..n {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[s] = 0;
            queue.clear();
            queue.push_back(s);
            while let Some(v) = queue.pop_front() {
                for &u in self.edges.neighbors(v) {
                    if dist[u] == usize::MAX {
                        dist[u] = dist[v] + 1;
                        best = best.max(dist[u]);
                        queue.push_back(u);
                    }
                }
            }
        }
        best
    }
}

/// How a [`NormalizedAdjacency`]'s per-edge weights were derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivation {
    /// Symmetric degree normalization over the self-loop-augmented adjacency:
    /// `weight(i, j) = 1 / sqrt(deg_i * deg_j)` with degrees counted on `A + I`.
    GcnSymmetric,
}

/// A CSR structure paired with one fixed real weight per stored edge.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    csr: Arc<Csr>,
    weights: Arc<Vec<f64>>,
    derivation: Derivation,
}

impl NormalizedAdjacency {
    pub fn csr(&self) -> &Arc<Csr> {
        &self.csr
    }

    pub fn weights(&self) -> &Arc<Vec<f64>> {
        &self.weights
    }

    pub fn derivation(&self) -> Derivation {
        self.derivation
    }

    pub fn weight_at(&self, row: usize, col: usize) -> Option<f64> {
        self.csr.edge_index(row, col).map(|e| self.weights[e])
    }

    /// Dense `N x N` realization, for oracles and small-graph tests.
    pub fn to_dense(&self) -> Matrix {
        let n = self.csr.num_nodes();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for (k, &j) in self.csr.neighbors(i).iter().enumerate() {
                out.set(i, j, self.weights[self.csr.offsets()[i] + k]);
            }
        }
        out
    }
}

/// Symmetric GCN normalization `D^{-1/2} (A + I) D^{-1/2}` in CSR form.
///
/// Every node gains a self-loop, so isolated nodes get weight 1 and the
/// derivation never divides by zero.
pub fn normalized_adjacency(g: &Graph) -> NormalizedAdjacency {
    normalized_adjacency_of(g.edges())
}

/// Same as [`normalized_adjacency`], starting from a bare CSR.
pub fn normalized_adjacency_of(edges: &Csr) -> NormalizedAdjacency {
    assert!(edges.num_nodes() >= 1, "graph must have at least one node");
    assert!(
        !edges.has_self_loops(),
        "normalization expects a loop-free adjacency; loops are added here"
    );
    let looped = edges.with_self_loops();
    let n = looped.num_nodes();
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|v| 1.0 / (looped.degree(v) as f64).sqrt())
        .collect();
    let mut weights = Vec::with_capacity(looped.nnz());
    for i in 0..n {
        for &j in looped.neighbors(i) {
            weights.push(inv_sqrt_deg[i] * inv_sqrt_deg[j]);
        }
    }
    NormalizedAdjacency {
        csr: Arc::new(looped),
        weights: Arc::new(weights),
        derivation: Derivation::GcnSymmetric,
    }
}
