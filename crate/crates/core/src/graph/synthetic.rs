//! Seed-deterministic synthetic datasets: a stochastic-block-model node
//! task and a topology-classification / diameter-regression graph task.
//!
//! These stand in for the citation networks and molecule benchmarks, which
//! need external downloads; every generator is deterministic per seed so
//! tests built on them are stable.

use super::dataset::{GraphTargets, Splits};
use super::{Graph, GraphDataset, GraphTask, NodeDataset};
use crate::autodiff::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Parameters of [`synthetic_node_task`].
#[derive(Debug, Clone)]
pub struct SyntheticNodeParams {
    pub num_nodes: usize,
    pub num_classes: usize,
    /// Fraction of edge stubs kept within the endpoint's class.
    pub homophily: f64,
    pub feature_dim: usize,
    /// Standard deviation of Gaussian feature noise around class means.
    pub noise: f64,
    /// Edge stubs drawn per node before symmetrization and dedup.
    pub stubs_per_node: usize,
}

impl SyntheticNodeParams {
    pub fn new(
        num_nodes: usize,
        num_classes: usize,
        homophily: f64,
        feature_dim: usize,
        noise: f64,
    ) -> Self {
        Self {
            num_nodes,
            num_classes,
            homophily,
            feature_dim,
            noise,
            stubs_per_node: 5,
        }
    }
}

/// Generates a stochastic-block-model node-classification dataset.
///
/// Each node draws `stubs_per_node` edge stubs; a stub stays within the
/// node's class with probability `homophily`, otherwise it targets a
/// uniformly random other class. Features are the node's class mean plus
/// `noise`-scaled Gaussian noise. Splits mirror the low-label regime:
/// 20 labeled nodes per class (capped by class size), up to 500 validation
/// nodes, remainder test.
pub fn synthetic_node_task(params: &SyntheticNodeParams, seed: u64) -> NodeDataset {
    let SyntheticNodeParams {
        num_nodes,
        num_classes,
        homophily,
        feature_dim,
        noise,
        stubs_per_node,
    } = *params;
    assert!(num_nodes >= num_classes, "need at least one node per class");
    assert!(
        (0.0..=1.0).contains(&homophily),
        "homophily must be in [0, 1]"
    );
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let labels: Vec<usize> = (0..num_nodes).map(|i| i % num_classes).collect();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }

    let mut edges = Vec::with_capacity(num_nodes * stubs_per_node);
    for (v, &label) in labels.iter().enumerate() {
        for _ in 0..stubs_per_node {
            let stays_within = num_classes == 1 || rng.random::<f64>() < homophily;
            let target_class = if stays_within {
                label
            } else {
                let mut c = rng.random_range(0..num_classes - 1);
                if c >= label {
                    c += 1;
                }
                c
            };
            let pool = &by_class[target_class];
            let u = pool[rng.random_range(0..pool.len())];
            if u != v {
                edges.push((v, u));
            }
        }
    }

    // class means sit on a sphere of radius 0.4: with unit feature noise the
    // classes overlap heavily and long-range smoothing drives the class signal below the graph noise floor
    let class_means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let raw: Vec<f64> = (0..feature_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            raw.iter().map(|v| 0.4 * v / norm).collect()
        })
        .collect();
    let mut features = Matrix::zeros(num_nodes, feature_dim);
    for v in 0..num_nodes {
        let mean = &class_means[labels[v]];
        let row = features.row_mut(v);
        for (j, m) in mean.iter().enumerate() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            row[j] = m + noise * eps;
        }
    }

    // 20 labeled nodes per class, 500 validation, remainder test.
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let take = members.len().min(20);
        train.extend_from_slice(&members[..take]);
        rest.extend_from_slice(&members[take..]);
    }
    rest.shuffle(&mut rng);
    let val_count = rest.len().min(500);
    let mut val: Vec<usize> = rest[..val_count].to_vec();
    let mut test: Vec<usize> = rest[val_count..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    let graph = Graph::new(num_nodes, &edges, features).expect("generated indices are in range");
    NodeDataset::new(
        graph,
        labels.iter().map(|&c| c as i64).collect(),
        num_classes,
        Splits { train, val, test },
    )
    .expect("generated splits are disjoint")
}

/// Topology kinds emitted by the synthetic graph task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Topology {
    Cycle,
    Path,
    Star,
}

const DEGREE_FEATURE_DIM: usize = 6;

fn topology_graph(kind: Topology, n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = match kind {
        Topology::Cycle => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        Topology::Path => (0..n - 1).map(|i| (i, i + 1)).collect(),
        Topology::Star => (1..n).map(|i| (0, i)).collect(),
    };
    let graph = Graph::new(n, &edges, Matrix::zeros(n, DEGREE_FEATURE_DIM)).unwrap();
    let mut features = Matrix::zeros(n, DEGREE_FEATURE_DIM);
    for v in 0..n {
        let deg = graph.edges().degree(v).min(DEGREE_FEATURE_DIM - 1);
        features.set(v, deg, 1.0);
    }
    let edges = graph.edges().undirected_edges();
    Graph::new(n, &edges, features).unwrap()
}

/// Generates a graph-level dataset of cycle/path/star topologies.
///
/// Classification targets the topology class (cycle=0, path=1, star=2) with
/// one-hot clipped-degree node features; regression targets the normalized
/// diameter `diameter / num_nodes` of the same graphs.
pub fn synthetic_graph_task(num_graphs: usize, task: GraphTask, seed: u64) -> GraphDataset {
    assert!(num_graphs >= 10, "need at least 10 graphs");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let kinds = [Topology::Cycle, Topology::Path, Topology::Star];
    let mut graphs = Vec::with_capacity(num_graphs);
    let mut classes = Vec::with_capacity(num_graphs);
    let mut reals = Vec::with_capacity(num_graphs);
    for i in 0..num_graphs {
        let kind = kinds[i % kinds.len()];
        let n = rng.random_range(4..=12usize);
        let g = topology_graph(kind, n);
        match task {
            GraphTask::Classification => classes.push(i % kinds.len()),
            GraphTask::Regression => reals.push(g.diameter() as f64 / n as f64),
        }
        graphs.push(g);
    }
    let (targets, num_classes) = match task {
        GraphTask::Classification => (GraphTargets::Classes(classes), kinds.len()),
        GraphTask::Regression => (GraphTargets::Reals(reals), 0),
    };
    GraphDataset {
        graphs,
        targets,
        task,
        num_classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homophily_one_keeps_edges_within_class_and_features_exact() {
        let params = SyntheticNodeParams::new(90, 3, 1.0, 4, 0.0);
        let ds = synthetic_node_task(&params, 5);
        for v in 0..ds.num_nodes() {
            for &u in ds.graph.edges().neighbors(v) {
                assert_eq!(ds.labels[v], ds.labels[u]);
            }
        }
        // noise = 0: nodes of one class share identical features
        let a = ds.graph.features().row(0).to_vec();
        let same_class = (0..ds.num_nodes()).find(|&v| v != 0 && ds.labels[v] == ds.labels[0]);
        assert_eq!(ds.graph.features().row(same_class.unwrap()), &a[..]);
    }

    #[test]
    fn node_task_is_seed_deterministic() {
        let params = SyntheticNodeParams::new(300, 3, 0.8, 8, 0.5);
        let a = synthetic_node_task(&params, 11);
        let b = synthetic_node_task(&params, 11);
        assert_eq!(a.graph.features(), b.graph.features());
        assert_eq!(a.graph.edges(), b.graph.edges());
        assert_eq!(a.splits, b.splits);
    }

    #[test]
    fn node_splits_follow_low_label_regime() {
        let params = SyntheticNodeParams::new(600, 3, 0.9, 8, 1.0);
        let ds = synthetic_node_task(&params, 1);
        assert_eq!(ds.splits.train.len(), 60);
        assert_eq!(ds.splits.val.len(), 500);
        assert_eq!(ds.splits.test.len(), 40);
    }

    #[test]
    fn six_cycle_classified_as_cycle_by_construction() {
        let ds = synthetic_graph_task(12, GraphTask::Classification, 3);
        // index 0, 3, 6, ... are cycles by round-robin construction
        assert_eq!(ds.class_labels().unwrap()[0], 0);
        let g = &ds.graphs[0];
        assert!((0..g.num_nodes()).all(|v| g.edges().degree(v) == 2));
    }

    #[test]
    fn path_regression_target_is_normalized_diameter() {
        let g = topology_graph(Topology::Path, 5);
        assert_eq!(g.diameter(), 4);
        let ds = synthetic_graph_task(30, GraphTask::Regression, 9);
        for (i, g) in ds.graphs.iter().enumerate() {
            let expected = g.diameter() as f64 / g.num_nodes() as f64;
            assert!((ds.real_targets().unwrap()[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn graph_task_is_seed_deterministic() {
        let a = synthetic_graph_task(20, GraphTask::Classification, 7);
        let b = synthetic_graph_task(20, GraphTask::Classification, 7);
        assert_eq!(a.class_labels(), b.class_labels());
        for (ga, gb) in a.graphs.iter().zip(&b.graphs) {
            assert_eq!(ga.edges(), gb.edges());
            assert_eq!(ga.features(), gb.features());
        }
    }
}
