//! Dense-tensor reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tensor`] handles
//! index into it. Calling [`Tensor::backward`] on a scalar walks the tape in
//! reverse, accumulating gradients across fan-out, after which the tape is
//! consumed. The op set is exactly what graph layers need: dense matmul,
//! CSR-segment aggregation, per-neighborhood softmax, readouts, losses, and
//! elementwise pieces — all in 64-bit precision.

mod grad_check;
mod matrix;
mod tape;

pub use grad_check::{grad_check, DEFAULT_GRAD_CHECK_STEP};
pub use matrix::Matrix;
pub use tape::{
    edge_endpoint_sum, segment_weighted_sum, segment_weighted_sum_edges, Activation, EdgeValues,
    PairNormMode, ReadoutKind, Reduction, Tape, Tensor,
};
