//! Shared fixtures for the benchmark targets.

use dsgnn_core::autodiff::{Activation, ReadoutKind};
use dsgnn_core::graph::{synthetic_node_task, NodeDataset, SyntheticNodeParams};
use dsgnn_core::layers::HeadCombine;
use dsgnn_core::models::{ArchitectureSpec, ConvKind, Model, OutputKind};
use dsgnn_core::{TaskKind, Variant};

/// The desk-scale benchmark dataset: 600 nodes, 3 classes, noisy features.
pub fn bench_dataset() -> NodeDataset {
    let params = SyntheticNodeParams::new(600, 3, 0.9, 16, 1.0);
    synthetic_node_task(&params, 7)
}

pub fn bench_spec(variant: Variant, depth: usize) -> ArchitectureSpec {
    ArchitectureSpec {
        task: TaskKind::Node,
        variant,
        conv: ConvKind::Gat,
        depth,
        hidden_dim: 8,
        num_heads: 8,
        head_combine: HeadCombine::Concat,
        activation: Activation::Elu,
        readout: ReadoutKind::Max,
        pairnorm: None,
        output: OutputKind::Classification { num_classes: 3 },
        feature_dropout: 0.0,
        attention_dropout: 0.0,
        head_bias: true,
        conv_bias: false,
    }
}

pub fn bench_model(variant: Variant, depth: usize) -> Model {
    Model::build(&bench_spec(variant, depth), 16, 0).expect("valid benchmark spec")
}
