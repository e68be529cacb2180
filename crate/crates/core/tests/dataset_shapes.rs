//! Loader checks against benchmark-shaped files.

use dsgnn_core::graph::{
    load_graph_dataset, save_graph_dataset, GraphDataset, GraphTargets, GraphTask,
};
use dsgnn_core::{Graph, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// A dataset shaped like the enzyme-classification benchmark: 600 graphs,
/// ~33 nodes on average, 18 node features, 6 classes.
#[test]
fn enzymes_shaped_file_loads_with_exact_counts() {
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let mut graphs = Vec::new();
    let mut classes = Vec::new();
    for i in 0..600usize {
        let n = rng.random_range(20..=46); // mean 33
        let mut edges = Vec::new();
        for v in 1..n {
            edges.push((rng.random_range(0..v), v));
        }
        let features = Matrix::glorot_uniform(n, 18, &mut rng);
        graphs.push(Graph::new(n, &edges, features).unwrap());
        classes.push(i % 6);
    }
    let ds = GraphDataset {
        graphs,
        targets: GraphTargets::Classes(classes),
        task: GraphTask::Classification,
        num_classes: 6,
    };

    let path =
        std::env::temp_dir().join(format!("dsgnn-enzymes-shaped-{}.jsonl", std::process::id()));
    save_graph_dataset(&ds, &path).unwrap();
    let loaded = load_graph_dataset(&path).unwrap();
    assert_eq!(loaded.len(), 600);
    assert_eq!(loaded.num_classes, 6);
    assert_eq!(loaded.feature_dim(), 18);
    let avg = loaded.graphs.iter().map(|g| g.num_nodes()).sum::<usize>() as f64 / 600.0;
    assert!((avg - 33.0).abs() < 2.0, "average node count {avg}");
    for (a, b) in ds.graphs.iter().zip(&loaded.graphs) {
        assert_eq!(a.features(), b.features());
        assert_eq!(a.edges(), b.edges());
    }
    std::fs::remove_file(&path).ok();
}
