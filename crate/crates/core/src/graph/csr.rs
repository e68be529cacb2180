//! Compressed sparse row adjacency structure.

use super::GraphError;

/// CSR adjacency: row offsets plus sorted column indices.
///
/// Rows are node ids; `cols[offsets[i]..offsets[i+1]]` are node `i`'s
/// neighbors in strictly increasing order with no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    num_nodes: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    has_self_loops: bool,
}

impl Csr {
    /// Builds a symmetrized CSR from an edge list.
    ///
    /// Directed input edges are mirrored, duplicates and self-loops are
    /// dropped, and neighbor lists are sorted. Self-loops are reintroduced
    /// explicitly where a computation needs them (see [`Csr::with_self_loops`]).
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::NodeIndexOutOfRange {
                    index: u.max(v),
                    num_nodes,
                });
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut cols = Vec::new();
        offsets.push(0);
        for neighbors in &mut adj {
            neighbors.sort_unstable();
            neighbors.dedup();
            cols.extend_from_slice(neighbors);
            offsets.push(cols.len());
        }
        Ok(Self {
            num_nodes,
            offsets,
            cols,
            has_self_loops: false,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored directed entries (each undirected edge counts twice).
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.cols[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Edge-slot index of entry `(row, col)`, if stored.
    pub fn edge_index(&self, row: usize, col: usize) -> Option<usize> {
        let span = &self.cols[self.offsets[row]..self.offsets[row + 1]];
        span.binary_search(&col).ok().map(|k| self.offsets[row] + k)
    }

    /// A copy with a self-loop entry inserted in every row.
    pub fn with_self_loops(&self) -> Csr {
        if self.has_self_loops {
            return self.clone();
        }
        let mut offsets = Vec::with_capacity(self.num_nodes + 1);
        let mut cols = Vec::with_capacity(self.cols.len() + self.num_nodes);
        offsets.push(0);
        for v in 0..self.num_nodes {
            let mut inserted = false;
            for &u in self.neighbors(v) {
                if !inserted && u > v {
                    cols.push(v);
                    inserted = true;
                }
                cols.push(u);
            }
            if !inserted {
                cols.push(v);
            }
            offsets.push(cols.len());
        }
        Csr {
            num_nodes: self.num_nodes,
            offsets,
            cols,
            has_self_loops: true,
        }
    }

    /// Whether the stored entry set equals its transpose.
    pub fn is_symmetric(&self) -> bool {
        for v in 0..self.num_nodes {
            for &u in self.neighbors(v) {
                if self.edge_index(u, v).is_none() {
                    return false;
                }
            }
        }
        true
    }

    /// Undirected edge list `(u, v)` with `u < v`, excluding self-loops.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.cols.len() / 2);
        for v in 0..self.num_nodes {
            for &u in self.neighbors(v) {
                if v < u {
                    out.push((v, u));
                }
            }
        }
        out
    }
}
