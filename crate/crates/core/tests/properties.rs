//! Property tests for structural invariants.

use dsgnn_core::autodiff::Matrix;
use dsgnn_core::graph::{make_folds, normalized_adjacency_of, zero_features, Splits};
use dsgnn_core::{Csr, Graph, NodeDataset};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loaded_graphs_are_symmetric(edges in prop::collection::vec((0usize..20, 0usize..20), 0..60)) {
        let csr = Csr::from_edges(20, &edges).unwrap();
        prop_assert!(csr.is_symmetric());
        // column indices strictly increasing per row
        for v in 0..20 {
            let neigh = csr.neighbors(v);
            for w in neigh.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
        }
    }

    #[test]
    fn normalization_row_identity(edges in prop::collection::vec((0usize..15, 0usize..15), 0..40)) {
        let csr = Csr::from_edges(15, &edges).unwrap();
        let adj = normalized_adjacency_of(&csr);
        let looped = adj.csr();
        for i in 0..15 {
            let di = looped.degree(i) as f64;
            let mut acc = 0.0;
            for &j in looped.neighbors(i) {
                acc += adj.weight_at(i, j).unwrap() * (looped.degree(j) as f64 / di).sqrt();
            }
            prop_assert!((acc - 1.0).abs() < 1e-12);
        }
        // symmetry of the weighted matrix
        for i in 0..15 {
            for &j in looped.neighbors(i) {
                let wij = adj.weight_at(i, j).unwrap();
                let wji = adj.weight_at(j, i).unwrap();
                prop_assert!((wij - wji).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn fold_test_partitions_cover_exactly(size in 6usize..80, folds in 2usize..6, seed in 0u64..500) {
        prop_assume!(size >= folds);
        let plan = make_folds(size, folds, None, seed).unwrap();
        let mut count = vec![0usize; size];
        for fold in &plan.folds {
            fold.validate(size).unwrap();
            for &i in &fold.test {
                count[i] += 1;
            }
            // each fold covers the whole dataset across its three splits
            let total = fold.train.len() + fold.val.len() + fold.test.len();
            prop_assert_eq!(total, size);
        }
        prop_assert!(count.iter().all(|&c| c == 1));
    }

    #[test]
    fn zero_features_preserves_train_rows(proportion in 0.0f64..=1.0, seed in 0u64..100) {
        let n = 24;
        let graph = Graph::new(n, &[(0, 1), (2, 3)], Matrix::from_vec(n, 3, (0..n * 3).map(|i| i as f64 + 1.0).collect())).unwrap();
        let splits = Splits {
            train: (0..8).collect(),
            val: (8..16).collect(),
            test: (16..24).collect(),
        };
        let ds = NodeDataset::new(graph, vec![0; n], 1, splits).unwrap();
        let masked = zero_features(&ds, proportion, seed);
        for &i in &ds.splits.train {
            prop_assert_eq!(masked.graph.features().row(i), ds.graph.features().row(i));
        }
        let zeroed = (8..24).filter(|&i| masked.graph.features().row(i).iter().all(|&v| v == 0.0)).count();
        prop_assert_eq!(zeroed, (proportion * 16.0).round() as usize);
    }
}
