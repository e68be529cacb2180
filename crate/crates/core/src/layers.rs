//! Graph layers composed from tape operations: GCN, multi-head GAT,
//! PairNorm, linear heads, and jump-connection concatenation.
//!
//! Layer structs hold [`ParamId`] handles into a [`ParamRegistry`] owned by
//! the model; each forward pass stages the registry onto a fresh tape and
//! layers look their parameters up in the staged slice.

use crate::autodiff::{
    edge_endpoint_sum, segment_weighted_sum, segment_weighted_sum_edges, Activation, Matrix,
    PairNormMode, Tape, Tensor,
};
use crate::graph::{Csr, NormalizedAdjacency};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Negative slope of the LeakyReLU inside attention logits.
pub const ATTENTION_LEAKY_SLOPE: f64 = 0.2;

/// Handle of one trainable parameter matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Flat, ordered store of all trainable parameters of one model.
///
/// Registry order is creation order; optimizers, checkpoints, and staged
/// tape leaves all use it.
#[derive(Debug, Clone, Default)]
pub struct ParamRegistry {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Stages every parameter as a `requires_grad` leaf, in registry order.
    pub fn stage(&self, tape: &Tape) -> Vec<Tensor> {
        self.values
            .iter()
            .map(|m| tape.leaf(m.clone(), true))
            .collect()
    }
}

/// How multi-head outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadCombine {
    Average,
    Concat,
}

/// One attention head: a projection matrix and the attention vector
/// over the concatenated projected endpoints.
#[derive(Debug, Clone)]
pub struct GatHead {
    pub proj: ParamId,
    /// Shape `2*d_head x 1`; the first half scores the source endpoint,
    /// the second half the destination.
    pub attn: ParamId,
}

/// Parameters of one multi-head GAT layer.
#[derive(Debug, Clone)]
pub struct GatLayerParams {
    pub heads: Vec<GatHead>,
    pub bias: Option<ParamId>,
    pub combine: HeadCombine,
    pub activation: Activation,
    pub feature_dropout: f64,
    pub attention_dropout: f64,
    pub in_dim: usize,
    pub head_dim: usize,
}

impl GatLayerParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        reg: &mut ParamRegistry,
        label: &str,
        in_dim: usize,
        head_dim: usize,
        num_heads: usize,
        combine: HeadCombine,
        activation: Activation,
        feature_dropout: f64,
        attention_dropout: f64,
        bias: bool,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let heads = (0..num_heads)
            .map(|h| GatHead {
                proj: reg.add(
                    format!("{label}.head{h}.proj"),
                    Matrix::glorot_uniform(in_dim, head_dim, rng),
                ),
                attn: reg.add(
                    format!("{label}.head{h}.attn"),
                    Matrix::glorot_uniform(2 * head_dim, 1, rng),
                ),
            })
            .collect();
        let out_dim = match combine {
            HeadCombine::Concat => num_heads * head_dim,
            HeadCombine::Average => head_dim,
        };
        let bias = bias.then(|| reg.add(format!("{label}.bias"), Matrix::zeros(1, out_dim)));
        Self {
            heads,
            bias,
            combine,
            activation,
            feature_dropout,
            attention_dropout,
            in_dim,
            head_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self.combine {
            HeadCombine::Concat => self.heads.len() * self.head_dim,
            HeadCombine::Average => self.head_dim,
        }
    }
}

/// Multi-head attention forward over a self-loop-augmented CSR.
///
/// Per head: project, score each edge with
/// `LeakyReLU(a^T [W h_i || W h_j])`, normalize per neighborhood, apply
/// attention dropout to the normalized coefficients, aggregate. Heads are
/// combined, bias added, and the activation applied last. Feature dropout
/// hits the input before projection.
pub fn gat_forward(
    p: &GatLayerParams,
    leaves: &[Tensor],
    csr: &Arc<Csr>,
    h: &Tensor,
    training: bool,
    rng: &mut ChaCha12Rng,
) -> Tensor {
    assert!(
        csr.has_self_loops(),
        "GAT attends over N(i) including i; pass a self-loop-augmented CSR"
    );
    assert_eq!(h.rows(), csr.num_nodes(), "feature rows must match nodes");
    assert_eq!(h.cols(), p.in_dim, "GAT input width mismatch");
    let h_in = h.dropout(p.feature_dropout, training, rng);
    let mut head_outputs = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let proj = h_in.matmul(&leaves[head.proj.0]);
        let attn = &leaves[head.attn.0];
        let a_src = attn.slice_rows(0, p.head_dim);
        let a_dst = attn.slice_rows(p.head_dim, 2 * p.head_dim);
        let s_src = proj.matmul(&a_src);
        let s_dst = proj.matmul(&a_dst);
        let logits = edge_endpoint_sum(&s_src, &s_dst, csr).leaky_relu(ATTENTION_LEAKY_SLOPE);
        let coeffs = logits.softmax().dropout(p.attention_dropout, training, rng);
        head_outputs.push(segment_weighted_sum_edges(&coeffs, &proj));
    }
    let combined = match p.combine {
        HeadCombine::Concat => Tensor::concat_cols(&head_outputs),
        HeadCombine::Average => Tensor::mean_of(&head_outputs),
    };
    let biased = match p.bias {
        Some(b) => combined.add_row(&leaves[b.0]),
        None => combined,
    };
    biased.activation(p.activation)
}

/// Attention coefficients of one GAT head, for diagnostics and tests:
/// the pre-dropout normalized weights aligned to `csr`.
pub fn gat_attention_coefficients(
    p: &GatLayerParams,
    leaves: &[Tensor],
    csr: &Arc<Csr>,
    h: &Tensor,
    head_index: usize,
) -> Vec<f64> {
    let head = &p.heads[head_index];
    let proj = h.matmul(&leaves[head.proj.0]);
    let attn = &leaves[head.attn.0];
    let a_src = attn.slice_rows(0, p.head_dim);
    let a_dst = attn.slice_rows(p.head_dim, 2 * p.head_dim);
    let s_src = proj.matmul(&a_src);
    let s_dst = proj.matmul(&a_dst);
    let coeffs = edge_endpoint_sum(&s_src, &s_dst, csr)
        .leaky_relu(ATTENTION_LEAKY_SLOPE)
        .softmax();
    coeffs.tensor().value().data().to_vec()
}

/// Parameters of one GCN layer.
#[derive(Debug, Clone)]
pub struct GcnLayerParams {
    pub weight: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl GcnLayerParams {
    pub fn init(
        reg: &mut ParamRegistry,
        label: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        Self {
            weight: reg.add(
                format!("{label}.weight"),
                Matrix::glorot_uniform(in_dim, out_dim, rng),
            ),
            activation,
            in_dim,
            out_dim,
        }
    }
}

/// GCN forward: `activation(aggregate(adj, h) W)`.
pub fn gcn_forward(
    p: &GcnLayerParams,
    leaves: &[Tensor],
    adj: &NormalizedAdjacency,
    h: &Tensor,
) -> Tensor {
    assert_eq!(h.rows(), adj.csr().num_nodes(), "node count mismatch");
    segment_weighted_sum(adj, h)
        .matmul(&leaves[p.weight.0])
        .activation(p.activation)
}

/// PairNorm configuration: scale and rescaling mode. No trainable state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairNormParams {
    pub scale: f64,
    pub mode: PairNormMode,
}

impl Default for PairNormParams {
    fn default() -> Self {
        Self {
            scale: 1.0,
            mode: PairNormMode::ScaleIndividually,
        }
    }
}

/// Centers node representations and rescales them so pairwise distances
/// cannot collapse.
pub fn pairnorm_forward(p: &PairNormParams, h: &Tensor) -> Tensor {
    h.pairnorm(p.scale, p.mode)
}

/// Output nonlinearity of a linear head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadActivation {
    Softmax,
    Identity,
}

/// A linear prediction head, optionally biased.
#[derive(Debug, Clone)]
pub struct LinearHeadParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub output: HeadActivation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearHeadParams {
    pub fn init(
        reg: &mut ParamRegistry,
        label: &str,
        in_dim: usize,
        out_dim: usize,
        output: HeadActivation,
        bias: bool,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        Self {
            weight: reg.add(
                format!("{label}.weight"),
                Matrix::glorot_uniform(in_dim, out_dim, rng),
            ),
            bias: bias.then(|| reg.add(format!("{label}.bias"), Matrix::zeros(1, out_dim))),
            output,
            in_dim,
            out_dim,
        }
    }
}

/// Pre-activation head output `h W (+ bias)`.
pub fn linear_head_logits(p: &LinearHeadParams, leaves: &[Tensor], h: &Tensor) -> Tensor {
    assert_eq!(h.cols(), p.in_dim, "head input width mismatch");
    let z = h.matmul(&leaves[p.weight.0]);
    match p.bias {
        Some(b) => z.add_row(&leaves[b.0]),
        None => z,
    }
}

/// Head output with its configured activation applied.
pub fn linear_head_forward(p: &LinearHeadParams, leaves: &[Tensor], h: &Tensor) -> Tensor {
    let z = linear_head_logits(p, leaves, h);
    match p.output {
        HeadActivation::Softmax => z.softmax_rows(),
        HeadActivation::Identity => z,
    }
}

/// Column concatenation of per-layer outputs: the jump-connection path.
pub fn jump_concat(per_layer: &[Tensor]) -> Tensor {
    assert!(!per_layer.is_empty(), "jump_concat of empty list");
    Tensor::concat_cols(per_layer)
}
