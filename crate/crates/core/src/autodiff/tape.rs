//! The recording tape and its operation set.

use super::Matrix;
use crate::graph::{Csr, NormalizedAdjacency};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

/// Element-wise nonlinearity kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Elu,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative as a function of the input. At the kink, LeakyReLU takes
    /// the positive-side slope 1 and ReLU takes 0.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Loss reduction over rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

/// Permutation-invariant graph readout kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    Max,
    Mean,
    Sum,
}

/// PairNorm rescaling modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairNormMode {
    ScaleIndividually,
    ScaleGlobally,
}

enum Op {
    Leaf,
    Matmul {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        c: f64,
    },
    AddRow {
        a: usize,
        row: usize,
    },
    Activation {
        a: usize,
        kind: Activation,
    },
    SoftmaxRows {
        a: usize,
    },
    Dropout {
        a: usize,
        mask: Vec<f64>,
    },
    ConcatCols {
        parts: Vec<usize>,
    },
    GatherRows {
        a: usize,
        indices: Vec<usize>,
    },
    SliceRows {
        a: usize,
        start: usize,
    },
    SumAll {
        a: usize,
    },
    Mse {
        pred: usize,
        target: Matrix,
    },
    CrossEntropyLogits {
        logits: usize,
        classes: Vec<usize>,
        reduction: Reduction,
    },
    CrossEntropyProbs {
        probs: usize,
        classes: Vec<usize>,
        reduction: Reduction,
    },
    SpmmFixed {
        csr: Arc<Csr>,
        weights: Arc<Vec<f64>>,
        h: usize,
    },
    SpmmEdges {
        csr: Arc<Csr>,
        weights: usize,
        h: usize,
    },
    EdgeSoftmax {
        logits: usize,
        csr: Arc<Csr>,
    },
    EdgeEndpointSum {
        src: usize,
        dst: usize,
        csr: Arc<Csr>,
    },
    Readout {
        h: usize,
        kind: ReadoutKind,
        segments: Arc<Vec<usize>>,
        argmax: Vec<usize>,
    },
    PairNorm {
        a: usize,
        scale: f64,
        mode: PairNormMode,
    },
}

struct TapeInner {
    values: Vec<Matrix>,
    grads: Vec<Option<Matrix>>,
    requires: Vec<bool>,
    ops: Vec<Op>,
    consumed: bool,
}

/// Records one forward pass; construction order is topological order.
/// A tape and its tensors belong to one single-threaded training run.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                values: Vec::new(),
                grads: Vec::new(),
                requires: Vec::new(),
                ops: Vec::new(),
                consumed: false,
            })),
        }
    }

    /// Registers an input tensor. Gradients flow into it only when
    /// `requires_grad` is set.
    pub fn leaf(&self, value: Matrix, requires_grad: bool) -> Tensor {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, requires: bool) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        assert!(
            !inner.consumed,
            "tape already consumed by backward; build a fresh tape"
        );
        let id = inner.values.len();
        inner.values.push(value);
        inner.grads.push(None);
        inner.requires.push(requires);
        inner.ops.push(op);
        Tensor {
            tape: self.clone(),
            id,
        }
    }

    fn same_tape(&self, other: &Tape) {
        assert!(
            Rc::ptr_eq(&self.inner, &other.inner),
            "tensors must come from the same tape"
        );
    }
}

/// A handle to one node of the active tape.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: usize,
}

impl Tensor {
    pub fn rows(&self) -> usize {
        self.tape.inner.borrow().values[self.id].rows()
    }

    pub fn cols(&self) -> usize {
        self.tape.inner.borrow().values[self.id].cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.inner.borrow().values[self.id].shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().requires[self.id]
    }

    /// A clone of the node's value.
    pub fn value(&self) -> Matrix {
        self.tape.inner.borrow().values[self.id].clone()
    }

    /// Reads the node's value without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.tape.inner.borrow().values[self.id])
    }

    /// The accumulated gradient, if backward reached this node.
    pub fn grad(&self) -> Option<Matrix> {
        self.tape.inner.borrow().grads[self.id].clone()
    }

    pub fn item(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let v = &inner.values[self.id];
        assert_eq!(v.shape(), (1, 1), "item() on non-scalar tensor");
        v.get(0, 0)
    }

    fn req(&self) -> bool {
        self.requires_grad()
    }

    /// Standard matrix product with reverse rules
    /// `dA += G B^T`, `dB += A^T G`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        self.tape.same_tape(&other.tape);
        let value = {
            let inner = self.tape.inner.borrow();
            inner.values[self.id].matmul(&inner.values[other.id])
        };
        let req = self.req() || other.req();
        self.tape.push(
            value,
            Op::Matmul {
                a: self.id,
                b: other.id,
            },
            req,
        )
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.tape.same_tape(&other.tape);
        let value = {
            let inner = self.tape.inner.borrow();
            inner.values[self.id].add(&inner.values[other.id])
        };
        let req = self.req() || other.req();
        self.tape.push(
            value,
            Op::Add {
                a: self.id,
                b: other.id,
            },
            req,
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let value = self.with_value(|v| v.scale(c));
        self.tape
            .push(value, Op::Scale { a: self.id, c }, self.req())
    }

    /// Broadcast-adds a `1 x d` row vector to every row.
    pub fn add_row(&self, row: &Tensor) -> Tensor {
        self.tape.same_tape(&row.tape);
        let value = {
            let inner = self.tape.inner.borrow();
            let a = &inner.values[self.id];
            let r = &inner.values[row.id];
            assert_eq!(r.rows(), 1, "add_row expects a 1 x d row vector");
            assert_eq!(a.cols(), r.cols(), "add_row width mismatch");
            let mut out = a.clone();
            for i in 0..out.rows() {
                for (o, &b) in out.row_mut(i).iter_mut().zip(r.row(0)) {
                    *o += b;
                }
            }
            out
        };
        let req = self.req() || row.req();
        self.tape.push(
            value,
            Op::AddRow {
                a: self.id,
                row: row.id,
            },
            req,
        )
    }

    pub fn activation(&self, kind: Activation) -> Tensor {
        let value = self.with_value(|v| v.map(|x| kind.apply(x)));
        self.tape
            .push(value, Op::Activation { a: self.id, kind }, self.req())
    }

    pub fn relu(&self) -> Tensor {
        self.activation(Activation::Relu)
    }

    pub fn elu(&self) -> Tensor {
        self.activation(Activation::Elu)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.activation(Activation::LeakyRelu(slope))
    }

    /// Numerically stabilized row-wise softmax.
    pub fn softmax_rows(&self) -> Tensor {
        let value = self.with_value(softmax_rows_value);
        self.tape
            .push(value, Op::SoftmaxRows { a: self.id }, self.req())
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// `1/(1-rate)`. Identity in eval mode or at rate 0.
    pub fn dropout(&self, rate: f64, training: bool, rng: &mut ChaCha12Rng) -> Tensor {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        if !training || rate == 0.0 {
            return self.clone();
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let (value, mask) = self.with_value(|v| {
            let mask: Vec<f64> = (0..v.len())
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep_scale
                    }
                })
                .collect();
            let data: Vec<f64> = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            (Matrix::from_vec(v.rows(), v.cols(), data), mask)
        });
        self.tape
            .push(value, Op::Dropout { a: self.id, mask }, self.req())
    }

    /// Column-wise concatenation; gradients slice back to their sources.
    pub fn concat_cols(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat of empty list");
        let tape = parts[0].tape.clone();
        for p in parts {
            tape.same_tape(&p.tape);
        }
        let value = {
            let inner = tape.inner.borrow();
            let rows = inner.values[parts[0].id].rows();
            let total: usize = parts.iter().map(|p| inner.values[p.id].cols()).sum();
            let mut out = Matrix::zeros(rows, total);
            let mut at = 0;
            for p in parts {
                let v = &inner.values[p.id];
                assert_eq!(v.rows(), rows, "concat row mismatch");
                for r in 0..rows {
                    out.row_mut(r)[at..at + v.cols()].copy_from_slice(v.row(r));
                }
                at += v.cols();
            }
            out
        };
        let req = parts.iter().any(Tensor::req);
        let ids = parts.iter().map(|p| p.id).collect();
        tape.push(value, Op::ConcatCols { parts: ids }, req)
    }

    /// Mean of same-shaped tensors.
    pub fn mean_of(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "mean of empty list");
        let mut acc = parts[0].clone();
        for p in &parts[1..] {
            acc = acc.add(p);
        }
        acc.scale(1.0 / parts.len() as f64)
    }

    /// Selects rows by index; duplicate indices accumulate in backward.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        let value = self.with_value(|v| {
            let mut out = Matrix::zeros(indices.len(), v.cols());
            for (k, &i) in indices.iter().enumerate() {
                out.row_mut(k).copy_from_slice(v.row(i));
            }
            out
        });
        self.tape.push(
            value,
            Op::GatherRows {
                a: self.id,
                indices: indices.to_vec(),
            },
            self.req(),
        )
    }

    /// Contiguous row slice `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let value = self.with_value(|v| {
            assert!(start < end && end <= v.rows(), "slice_rows out of range");
            let mut out = Matrix::zeros(end - start, v.cols());
            for r in start..end {
                out.row_mut(r - start).copy_from_slice(v.row(r));
            }
            out
        });
        self.tape
            .push(value, Op::SliceRows { a: self.id, start }, self.req())
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum_all(&self) -> Tensor {
        let value = self.with_value(|v| Matrix::scalar(v.sum()));
        self.tape.push(value, Op::SumAll { a: self.id }, self.req())
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&self, target: &Matrix) -> Tensor {
        let value = self.with_value(|v| {
            assert_eq!(v.shape(), target.shape(), "mse shape mismatch");
            let n = v.len() as f64;
            let sum: f64 = v
                .data()
                .iter()
                .zip(target.data())
                .map(|(p, t)| (p - t) * (p - t))
                .sum();
            Matrix::scalar(sum / n)
        });
        self.tape.push(
            value,
            Op::Mse {
                pred: self.id,
                target: target.clone(),
            },
            self.req(),
        )
    }

    /// Fused log-softmax + negative log likelihood over class indices.
    /// The gradient is `softmax(z) - onehot(y)` scaled by the reduction.
    pub fn cross_entropy_logits(&self, classes: &[usize], reduction: Reduction) -> Tensor {
        let value = self.with_value(|z| {
            assert_eq!(z.rows(), classes.len(), "one class per row");
            let mut total = 0.0;
            for (r, &c) in classes.iter().enumerate() {
                assert!(
                    c < z.cols(),
                    "label index {c} out of range for {} classes",
                    z.cols()
                );
                let row = z.row(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
                total += lse - row[c];
            }
            if reduction == Reduction::Mean {
                total /= classes.len() as f64;
            }
            Matrix::scalar(total)
        });
        self.tape.push(
            value,
            Op::CrossEntropyLogits {
                logits: self.id,
                classes: classes.to_vec(),
                reduction,
            },
            self.req(),
        )
    }

    /// Cross-entropy on probability rows, clamped to `[1e-12, 1]` inside the
    /// log so saturated softmax outputs cannot produce infinite loss.
    pub fn cross_entropy_probs(&self, classes: &[usize], reduction: Reduction) -> Tensor {
        let value = self.with_value(|p| {
            assert_eq!(p.rows(), classes.len(), "one class per row");
            let mut total = 0.0;
            for (r, &c) in classes.iter().enumerate() {
                assert!(
                    c < p.cols(),
                    "label index {c} out of range for {} classes",
                    p.cols()
                );
                total -= p.get(r, c).clamp(CROSS_ENTROPY_EPS, 1.0).ln();
            }
            if reduction == Reduction::Mean {
                total /= classes.len() as f64;
            }
            Matrix::scalar(total)
        });
        self.tape.push(
            value,
            Op::CrossEntropyProbs {
                probs: self.id,
                classes: classes.to_vec(),
                reduction,
            },
            self.req(),
        )
    }

    /// Per-segment column-wise reduction mapping node rows to one row per
    /// graph. `segments` holds node offsets: graph `g` owns rows
    /// `segments[g]..segments[g+1]`.
    pub fn readout(&self, kind: ReadoutKind, segments: &Arc<Vec<usize>>) -> Tensor {
        let (value, argmax) = self.with_value(|h| {
            let num_graphs = segments.len() - 1;
            let d = h.cols();
            assert_eq!(
                *segments.last().unwrap(),
                h.rows(),
                "segments must cover all rows"
            );
            let mut out = Matrix::zeros(num_graphs, d);
            let mut argmax = vec![
                0usize;
                if kind == ReadoutKind::Max {
                    num_graphs * d
                } else {
                    0
                }
            ];
            for g in 0..num_graphs {
                let (start, end) = (segments[g], segments[g + 1]);
                assert!(start < end, "empty readout segment {g}");
                match kind {
                    ReadoutKind::Max => {
                        for c in 0..d {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_row = start;
                            for r in start..end {
                                let v = h.get(r, c);
                                // strict > keeps the first occurrence on ties
                                if v > best {
                                    best = v;
                                    best_row = r;
                                }
                            }
                            out.set(g, c, best);
                            argmax[g * d + c] = best_row;
                        }
                    }
                    ReadoutKind::Mean => {
                        let inv = 1.0 / (end - start) as f64;
                        for r in start..end {
                            for (c, &v) in h.row(r).iter().enumerate() {
                                out.set(g, c, out.get(g, c) + v * inv);
                            }
                        }
                    }
                    ReadoutKind::Sum => {
                        for r in start..end {
                            for (c, &v) in h.row(r).iter().enumerate() {
                                out.set(g, c, out.get(g, c) + v);
                            }
                        }
                    }
                }
            }
            (out, argmax)
        });
        self.tape.push(
            value,
            Op::Readout {
                h: self.id,
                kind,
                segments: Arc::clone(segments),
                argmax,
            },
            self.req(),
        )
    }

    /// Centers rows to zero column mean, then rescales: each row to norm
    /// `scale` (individual mode) or the whole matrix to Frobenius norm
    /// `scale * sqrt(N)` (global mode). Zero rows / matrices stay zero.
    pub fn pairnorm(&self, scale: f64, mode: PairNormMode) -> Tensor {
        assert!(scale > 0.0, "pairnorm scale must be positive");
        let value = self.with_value(|x| pairnorm_value(x, scale, mode));
        self.tape.push(
            value,
            Op::PairNorm {
                a: self.id,
                scale,
                mode,
            },
            self.req(),
        )
    }

    /// Runs reverse-mode accumulation from this scalar and consumes the tape.
    pub fn backward(&self) {
        let mut inner = self.tape.inner.borrow_mut();
        assert!(!inner.consumed, "tape already consumed by backward");
        assert_eq!(
            inner.values[self.id].shape(),
            (1, 1),
            "backward requires a scalar loss"
        );
        inner.consumed = true;
        inner.grads[self.id] = Some(Matrix::scalar(1.0));
        for i in (0..=self.id).rev() {
            if inner.grads[i].is_none() || matches!(inner.ops[i], Op::Leaf) {
                continue;
            }
            backward_step(&mut inner, i);
        }
    }
}

const CROSS_ENTROPY_EPS: f64 = 1e-12;

fn softmax_rows_value(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn pairnorm_value(x: &Matrix, scale: f64, mode: PairNormMode) -> Matrix {
    let means = x.col_means();
    let mut centered = x.clone();
    for r in 0..centered.rows() {
        for (v, &m) in centered.row_mut(r).iter_mut().zip(means.row(0)) {
            *v -= m;
        }
    }
    match mode {
        PairNormMode::ScaleIndividually => {
            for r in 0..centered.rows() {
                let row = centered.row_mut(r);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    let f = scale / norm;
                    row.iter_mut().for_each(|v| *v *= f);
                }
            }
            centered
        }
        PairNormMode::ScaleGlobally => {
            let fro = centered.frobenius_norm();
            if fro == 0.0 {
                centered
            } else {
                let f = scale * (x.rows() as f64).sqrt() / fro;
                centered.scale(f)
            }
        }
    }
}

/// Propagates the gradient of node `i` into its inputs.
fn backward_step(inner: &mut TapeInner, i: usize) {
    // Take the upstream gradient by clone: it must stay queryable afterwards.
    let go = inner.grads[i].clone().expect("grad present");
    match &inner.ops[i] {
        Op::Leaf => unreachable!("leaves are skipped"),
        Op::Matmul { a, b } => {
            let (a, b) = (*a, *b);
            if inner.requires[a] {
                let contrib = go.matmul_a_bt(&inner.values[b]);
                add_grad(inner, a, contrib);
            }
            if inner.requires[b] {
                let contrib = inner.values[a].matmul_at_b(&go);
                add_grad(inner, b, contrib);
            }
        }
        Op::Add { a, b } => {
            let (a, b) = (*a, *b);
            if inner.requires[a] {
                add_grad(inner, a, go.clone());
            }
            if inner.requires[b] {
                add_grad(inner, b, go);
            }
        }
        Op::Scale { a, c } => {
            let (a, c) = (*a, *c);
            if inner.requires[a] {
                add_grad(inner, a, go.scale(c));
            }
        }
        Op::AddRow { a, row } => {
            let (a, row) = (*a, *row);
            if inner.requires[a] {
                add_grad(inner, a, go.clone());
            }
            if inner.requires[row] {
                let mut sums = Matrix::zeros(1, go.cols());
                for r in 0..go.rows() {
                    for (c, &v) in go.row(r).iter().enumerate() {
                        sums.set(0, c, sums.get(0, c) + v);
                    }
                }
                add_grad(inner, row, sums);
            }
        }
        Op::Activation { a, kind } => {
            let (a, kind) = (*a, *kind);
            if inner.requires[a] {
                let x = &inner.values[a];
                let data: Vec<f64> = go
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &xv)| g * kind.derivative(xv))
                    .collect();
                let contrib = Matrix::from_vec(x.rows(), x.cols(), data);
                add_grad(inner, a, contrib);
            }
        }
        Op::SoftmaxRows { a } => {
            let a = *a;
            if inner.requires[a] {
                let y = &inner.values[i];
                let mut contrib = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = go.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for (c, (&yv, &gv)) in yr.iter().zip(gr).enumerate() {
                        contrib.set(r, c, yv * (gv - dot));
                    }
                }
                add_grad(inner, a, contrib);
            }
        }
        Op::Dropout { a, mask } => {
            let a = *a;
            if inner.requires[a] {
                let x = &inner.values[a];
                let data: Vec<f64> = go.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                let contrib = Matrix::from_vec(x.rows(), x.cols(), data);
                add_grad(inner, a, contrib);
            }
        }
        Op::ConcatCols { parts } => {
            let parts = parts.clone();
            let mut at = 0;
            for p in parts {
                let cols = inner.values[p].cols();
                if inner.requires[p] {
                    let mut contrib = Matrix::zeros(go.rows(), cols);
                    for r in 0..go.rows() {
                        contrib
                            .row_mut(r)
                            .copy_from_slice(&go.row(r)[at..at + cols]);
                    }
                    add_grad(inner, p, contrib);
                }
                at += cols;
            }
        }
        Op::GatherRows { a, indices } => {
            let a = *a;
            if inner.requires[a] {
                let mut contrib = Matrix::zeros(inner.values[a].rows(), inner.values[a].cols());
                for (k, &idx) in indices.iter().enumerate() {
                    for (c, &v) in go.row(k).iter().enumerate() {
                        contrib.set(idx, c, contrib.get(idx, c) + v);
                    }
                }
                add_grad(inner, a, contrib);
            }
        }
        Op::SliceRows { a, start } => {
            let (a, start) = (*a, *start);
            if inner.requires[a] {
                let mut contrib = Matrix::zeros(inner.values[a].rows(), inner.values[a].cols());
                for r in 0..go.rows() {
                    contrib.row_mut(start + r).copy_from_slice(go.row(r));
                }
                add_grad(inner, a, contrib);
            }
        }
        Op::SumAll { a } => {
            let a = *a;
            if inner.requires[a] {
                let g = go.get(0, 0);
                let v = &inner.values[a];
                let contrib = Matrix::from_vec(v.rows(), v.cols(), vec![g; v.len()]);
                add_grad(inner, a, contrib);
            }
        }
        Op::Mse { pred, target } => {
            let p = *pred;
            if inner.requires[p] {
                let g = go.get(0, 0);
                let v = &inner.values[p];
                let n = v.len() as f64;
                let data: Vec<f64> = v
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&pv, &tv)| g * 2.0 * (pv - tv) / n)
                    .collect();
                let contrib = Matrix::from_vec(v.rows(), v.cols(), data);
                add_grad(inner, p, contrib);
            }
        }
        Op::CrossEntropyLogits {
            logits,
            classes,
            reduction,
        } => {
            let l = *logits;
            if inner.requires[l] {
                let g = go.get(0, 0);
                let scale = match reduction {
                    Reduction::Sum => g,
                    Reduction::Mean => g / classes.len() as f64,
                };
                let mut contrib = softmax_rows_value(&inner.values[l]);
                for (r, &c) in classes.iter().enumerate() {
                    contrib.set(r, c, contrib.get(r, c) - 1.0);
                }
                add_grad(inner, l, contrib.scale(scale));
            }
        }
        Op::CrossEntropyProbs {
            probs,
            classes,
            reduction,
        } => {
            let p = *probs;
            if inner.requires[p] {
                let g = go.get(0, 0);
                let scale = match reduction {
                    Reduction::Sum => g,
                    Reduction::Mean => g / classes.len() as f64,
                };
                let v = &inner.values[p];
                let mut contrib = Matrix::zeros(v.rows(), v.cols());
                for (r, &c) in classes.iter().enumerate() {
                    let clamped = v.get(r, c).clamp(CROSS_ENTROPY_EPS, 1.0);
                    contrib.set(r, c, -scale / clamped);
                }
                add_grad(inner, p, contrib);
            }
        }
        Op::SpmmFixed { csr, weights, h } => {
            let (csr, weights, h) = (Arc::clone(csr), Arc::clone(weights), *h);
            if inner.requires[h] {
                let contrib = spmm_transpose_into_h(&csr, &weights, &go, &inner.values[h]);
                add_grad(inner, h, contrib);
            }
        }
        Op::SpmmEdges { csr, weights, h } => {
            let (csr, w_id, h) = (Arc::clone(csr), *weights, *h);
            let w = inner.values[w_id].data().to_vec();
            if inner.requires[h] {
                let contrib = spmm_transpose_into_h(&csr, &w, &go, &inner.values[h]);
                add_grad(inner, h, contrib);
            }
            if inner.requires[w_id] {
                // dL/dw_ij = <g_i, h_j>
                let hv = &inner.values[h];
                let mut contrib = Matrix::zeros(w.len(), 1);
                for row in 0..csr.num_nodes() {
                    let g_row = go.row(row);
                    for (k, &col) in csr.neighbors(row).iter().enumerate() {
                        let e = csr.offsets()[row] + k;
                        let dot: f64 = g_row.iter().zip(hv.row(col)).map(|(&a, &b)| a * b).sum();
                        contrib.set(e, 0, dot);
                    }
                }
                add_grad(inner, w_id, contrib);
            }
        }
        Op::EdgeSoftmax { logits, csr } => {
            let (l, csr) = (*logits, Arc::clone(csr));
            if inner.requires[l] {
                let y = &inner.values[i];
                let mut contrib = Matrix::zeros(y.rows(), 1);
                for row in 0..csr.num_nodes() {
                    let (start, end) = (csr.offsets()[row], csr.offsets()[row + 1]);
                    let dot: f64 = (start..end).map(|e| y.get(e, 0) * go.get(e, 0)).sum();
                    for e in start..end {
                        contrib.set(e, 0, y.get(e, 0) * (go.get(e, 0) - dot));
                    }
                }
                add_grad(inner, l, contrib);
            }
        }
        Op::EdgeEndpointSum { src, dst, csr } => {
            let (src, dst, csr) = (*src, *dst, Arc::clone(csr));
            if inner.requires[src] {
                let mut contrib = Matrix::zeros(csr.num_nodes(), 1);
                for row in 0..csr.num_nodes() {
                    let (start, end) = (csr.offsets()[row], csr.offsets()[row + 1]);
                    let sum: f64 = (start..end).map(|e| go.get(e, 0)).sum();
                    contrib.set(row, 0, sum);
                }
                add_grad(inner, src, contrib);
            }
            if inner.requires[dst] {
                let mut contrib = Matrix::zeros(csr.num_nodes(), 1);
                for row in 0..csr.num_nodes() {
                    for (k, &col) in csr.neighbors(row).iter().enumerate() {
                        let e = csr.offsets()[row] + k;
                        contrib.set(col, 0, contrib.get(col, 0) + go.get(e, 0));
                    }
                }
                add_grad(inner, dst, contrib);
            }
        }
        Op::Readout {
            h,
            kind,
            segments,
            argmax,
        } => {
            let (h, kind) = (*h, *kind);
            let segments = Arc::clone(segments);
            let argmax = argmax.clone();
            if inner.requires[h] {
                let hv = &inner.values[h];
                let d = hv.cols();
                let mut contrib = Matrix::zeros(hv.rows(), d);
                for g in 0..segments.len() - 1 {
                    let (start, end) = (segments[g], segments[g + 1]);
                    match kind {
                        ReadoutKind::Max => {
                            for c in 0..d {
                                let r = argmax[g * d + c];
                                contrib.set(r, c, contrib.get(r, c) + go.get(g, c));
                            }
                        }
                        ReadoutKind::Mean => {
                            let inv = 1.0 / (end - start) as f64;
                            for r in start..end {
                                for c in 0..d {
                                    contrib.set(r, c, contrib.get(r, c) + go.get(g, c) * inv);
                                }
                            }
                        }
                        ReadoutKind::Sum => {
                            for r in start..end {
                                for c in 0..d {
                                    contrib.set(r, c, contrib.get(r, c) + go.get(g, c));
                                }
                            }
                        }
                    }
                }
                add_grad(inner, h, contrib);
            }
        }
        Op::PairNorm { a, scale, mode } => {
            let (a, scale, mode) = (*a, *scale, *mode);
            if inner.requires[a] {
                let x = &inner.values[a];
                let contrib = pairnorm_backward(x, &go, scale, mode);
                add_grad(inner, a, contrib);
            }
        }
    }
}

fn add_grad(inner: &mut TapeInner, id: usize, contribution: Matrix) {
    match &mut inner.grads[id] {
        Some(g) => g.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

/// Applies the transpose of the weighted-adjacency operator to `g`:
/// `dH[j] += w_ij * g[i]` over all stored edges.
fn spmm_transpose_into_h(csr: &Csr, weights: &[f64], g: &Matrix, h: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for row in 0..csr.num_nodes() {
        let g_row = g.row(row);
        for (k, &col) in csr.neighbors(row).iter().enumerate() {
            let w = weights[csr.offsets()[row] + k];
            if w == 0.0 {
                continue;
            }
            let out_row = out.row_mut(col);
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += w * gv;
            }
        }
    }
    out
}

fn pairnorm_backward(x: &Matrix, go: &Matrix, scale: f64, mode: PairNormMode) -> Matrix {
    let (n, d) = x.shape();
    let means = x.col_means();
    let mut centered = x.clone();
    for r in 0..n {
        for (v, &m) in centered.row_mut(r).iter_mut().zip(means.row(0)) {
            *v -= m;
        }
    }
    // Gradient through the rescaling into the centered matrix.
    let mut d_centered = Matrix::zeros(n, d);
    match mode {
        PairNormMode::ScaleIndividually => {
            for r in 0..n {
                let row = centered.row(r);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    continue;
                }
                let g_row = go.row(r);
                let unit: Vec<f64> = row.iter().map(|&v| v / norm).collect();
                let dot: f64 = g_row.iter().zip(&unit).map(|(&g, &u)| g * u).sum();
                let f = scale / norm;
                for (c, (&g, &u)) in g_row.iter().zip(&unit).enumerate() {
                    d_centered.set(r, c, f * (g - dot * u));
                }
            }
        }
        PairNormMode::ScaleGlobally => {
            let fro = centered.frobenius_norm();
            if fro > 0.0 {
                let c_factor = scale * (n as f64).sqrt();
                let dot: f64 = go
                    .data()
                    .iter()
                    .zip(centered.data())
                    .map(|(&g, &v)| g * v)
                    .sum();
                for idx in 0..n * d {
                    let g = go.data()[idx];
                    let v = centered.data()[idx];
                    d_centered.data_mut()[idx] = c_factor * (g / fro - v * dot / (fro * fro * fro));
                }
            }
        }
    }
    // Gradient through the centering: subtract column means again.
    let d_means = d_centered.col_means();
    let mut out = d_centered;
    for r in 0..n {
        for (v, &m) in out.row_mut(r).iter_mut().zip(d_means.row(0)) {
            *v -= m;
        }
    }
    out
}

/// Per-edge values aligned to a CSR structure's column-index array.
///
/// Holds attention logits and normalized coefficients during a GAT forward;
/// values live on the tape as an `nnz x 1` tensor.
#[derive(Clone)]
pub struct EdgeValues {
    csr: Arc<Csr>,
    values: Tensor,
}

impl EdgeValues {
    pub fn new(csr: Arc<Csr>, values: Tensor) -> Self {
        assert_eq!(values.shape(), (csr.nnz(), 1), "one value per stored edge");
        Self { csr, values }
    }

    pub fn csr(&self) -> &Arc<Csr> {
        &self.csr
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    /// Softmax within each CSR row; rows with a single entry become exactly 1.
    pub fn softmax(&self) -> EdgeValues {
        let csr = Arc::clone(&self.csr);
        let value = self.values.with_value(|l| {
            let mut out = Matrix::zeros(l.rows(), 1);
            for row in 0..csr.num_nodes() {
                let (start, end) = (csr.offsets()[row], csr.offsets()[row + 1]);
                if start == end {
                    continue;
                }
                let m = (start..end)
                    .map(|e| l.get(e, 0))
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for e in start..end {
                    let v = (l.get(e, 0) - m).exp();
                    out.set(e, 0, v);
                    sum += v;
                }
                for e in start..end {
                    out.set(e, 0, out.get(e, 0) / sum);
                }
            }
            out
        });
        let tensor = self.values.tape.push(
            value,
            Op::EdgeSoftmax {
                logits: self.values.id,
                csr: Arc::clone(&self.csr),
            },
            self.values.req(),
        );
        EdgeValues {
            csr,
            values: tensor,
        }
    }

    pub fn leaky_relu(&self, slope: f64) -> EdgeValues {
        EdgeValues {
            csr: Arc::clone(&self.csr),
            values: self.values.leaky_relu(slope),
        }
    }

    pub fn dropout(&self, rate: f64, training: bool, rng: &mut ChaCha12Rng) -> EdgeValues {
        EdgeValues {
            csr: Arc::clone(&self.csr),
            values: self.values.dropout(rate, training, rng),
        }
    }
}

/// Builds per-edge values `out[e=(i,j)] = src[i] + dst[j]`, the additive
/// form of the attention logit for projected endpoint scores.
pub fn edge_endpoint_sum(src: &Tensor, dst: &Tensor, csr: &Arc<Csr>) -> EdgeValues {
    src.tape.same_tape(&dst.tape);
    let value = {
        let inner = src.tape.inner.borrow();
        let s = &inner.values[src.id];
        let d = &inner.values[dst.id];
        assert_eq!(s.shape(), (csr.num_nodes(), 1), "src must be N x 1");
        assert_eq!(d.shape(), (csr.num_nodes(), 1), "dst must be N x 1");
        let mut out = Matrix::zeros(csr.nnz(), 1);
        for row in 0..csr.num_nodes() {
            for (k, &col) in csr.neighbors(row).iter().enumerate() {
                out.set(csr.offsets()[row] + k, 0, s.get(row, 0) + d.get(col, 0));
            }
        }
        out
    };
    let req = src.req() || dst.req();
    let tensor = src.tape.push(
        value,
        Op::EdgeEndpointSum {
            src: src.id,
            dst: dst.id,
            csr: Arc::clone(csr),
        },
        req,
    );
    EdgeValues {
        csr: Arc::clone(csr),
        values: tensor,
    }
}

fn spmm_value(csr: &Csr, weights: &[f64], h: &Matrix) -> Matrix {
    assert_eq!(csr.num_nodes(), h.rows(), "adjacency/feature row mismatch");
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for row in 0..csr.num_nodes() {
        for (k, &col) in csr.neighbors(row).iter().enumerate() {
            let w = weights[csr.offsets()[row] + k];
            if w == 0.0 {
                continue;
            }
            let h_row = h.row(col);
            let out_row = out.row_mut(row);
            for (o, &v) in out_row.iter_mut().zip(h_row) {
                *o += w * v;
            }
        }
    }
    out
}

/// Neighborhood aggregation with fixed normalized weights:
/// `out[i] = sum_j w_ij h[j]`.
pub fn segment_weighted_sum(adj: &NormalizedAdjacency, h: &Tensor) -> Tensor {
    let value = h.with_value(|hv| spmm_value(adj.csr(), adj.weights(), hv));
    h.tape.push(
        value,
        Op::SpmmFixed {
            csr: Arc::clone(adj.csr()),
            weights: Arc::clone(adj.weights()),
            h: h.id,
        },
        h.req(),
    )
}

/// Neighborhood aggregation with differentiable per-edge weights; gradients
/// flow into `h` and into the weights (`dL/dw_ij = <g_i, h_j>`).
pub fn segment_weighted_sum_edges(weights: &EdgeValues, h: &Tensor) -> Tensor {
    weights.values.tape.same_tape(&h.tape);
    let value = {
        let inner = h.tape.inner.borrow();
        spmm_value(
            &weights.csr,
            inner.values[weights.values.id].data(),
            &inner.values[h.id],
        )
    };
    let req = weights.values.req() || h.req();
    h.tape.push(
        value,
        Op::SpmmEdges {
            csr: Arc::clone(&weights.csr),
            weights: weights.values.id,
            h: h.id,
        },
        req,
    )
}
