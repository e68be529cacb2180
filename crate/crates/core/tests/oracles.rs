//! Dense-matrix and brute-force oracles for the sparse kernels.

use dsgnn_core::autodiff::{segment_weighted_sum, Matrix, Tape};
use dsgnn_core::graph::normalized_adjacency_of;
use dsgnn_core::training::{col_diff, row_diff};
use dsgnn_core::Csr;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn random_graph(rng: &mut ChaCha12Rng, max_nodes: usize) -> (usize, Vec<(usize, usize)>) {
    let n = rng.random_range(1..=max_nodes);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < 0.15 {
                edges.push((u, v));
            }
        }
    }
    (n, edges)
}

/// Dense D^{-1/2} (A+I) D^{-1/2} computed with explicit matrices.
fn dense_normalized(n: usize, edges: &[(usize, usize)]) -> Matrix {
    let mut a = Matrix::identity(n);
    for &(u, v) in edges {
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    let mut d_inv_sqrt = Matrix::zeros(n, n);
    for i in 0..n {
        let deg: f64 = (0..n).map(|j| a.get(i, j)).sum();
        d_inv_sqrt.set(i, i, 1.0 / deg.sqrt());
    }
    d_inv_sqrt.matmul(&a).matmul(&d_inv_sqrt)
}

#[test]
fn normalized_adjacency_matches_dense_oracle_on_200_graphs() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xAD30);
    for case in 0..200 {
        let (n, edges) = random_graph(&mut rng, 50);
        let csr = Csr::from_edges(n, &edges).unwrap();
        let adj = normalized_adjacency_of(&csr);
        let dense = dense_normalized(n, &edges);
        let diff = adj.to_dense().max_abs_diff(&dense);
        assert!(diff < 1e-12, "case {case}: dense mismatch {diff}");
    }
}

#[test]
fn segment_weighted_sum_matches_dense_matmul_on_200_graphs() {
    let mut rng = ChaCha12Rng::seed_from_u64(0x5E65);
    for case in 0..200 {
        let (n, edges) = random_graph(&mut rng, 50);
        let csr = Csr::from_edges(n, &edges).unwrap();
        let adj = normalized_adjacency_of(&csr);
        let d = rng.random_range(1..=8);
        let h = Matrix::glorot_uniform(n, d, &mut rng);
        let tape = Tape::new();
        let ht = tape.leaf(h.clone(), false);
        let sparse = segment_weighted_sum(&adj, &ht).value();
        let dense = adj.to_dense().matmul(&h);
        let diff = sparse.max_abs_diff(&dense);
        assert!(diff < 1e-12, "case {case}: spmm mismatch {diff}");
    }
}

#[test]
fn row_and_col_diff_match_double_loop_oracles() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xD1FF);
    for case in 0..50 {
        let h = Matrix::glorot_uniform(20, 8, &mut rng).scale(3.0);

        // independent double-loop oracle for the mean pairwise row distance
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..20 {
            for j in 0..20 {
                if i < j {
                    let mut acc = 0.0;
                    for c in 0..8 {
                        let delta = h.get(i, c) - h.get(j, c);
                        acc += delta * delta;
                    }
                    total += acc.sqrt();
                    pairs += 1;
                }
            }
        }
        let expected_row = total / pairs as f64;
        assert!((row_diff(&h) - expected_row).abs() < 1e-12, "case {case}");

        // column oracle: normalize by L1 norm, then mean pairwise distance
        let mut norm_cols = vec![vec![0.0f64; 20]; 8];
        for (c, col) in norm_cols.iter_mut().enumerate() {
            let mut l1 = 0.0;
            for (r, slot) in col.iter_mut().enumerate() {
                *slot = h.get(r, c);
                l1 += h.get(r, c).abs();
            }
            if l1 > 0.0 {
                col.iter_mut().for_each(|v| *v /= l1);
            }
        }
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..8 {
            for j in 0..8 {
                if i < j {
                    let acc: f64 = norm_cols[i]
                        .iter()
                        .zip(&norm_cols[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    total += acc.sqrt();
                    pairs += 1;
                }
            }
        }
        let expected_col = total / pairs as f64;
        assert!((col_diff(&h) - expected_col).abs() < 1e-12, "case {case}");
    }
}
