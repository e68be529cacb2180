//! `export-embeddings`: one TSV of node embeddings per conv layer, plus the
//! row-diff/col-diff diagnostics CSV. Dropout is off, so re-export is
//! byte-identical.

use super::write_file;
use crate::data::{load_from_path, preprocess_node, LoadedDataset, Provenance};
use crate::output::diagnostics_csv;
use anyhow::{anyhow, Result};
use clap::Args;
use dsgnn_core::autodiff::Tape;
use dsgnn_core::graph::{merge_graphs, Graph, GraphTargets};
use dsgnn_core::models::load_checkpoint;
use dsgnn_core::training::{layer_diagnostics_graph, layer_diagnostics_node};
use std::path::PathBuf;

const DIAGNOSTIC_GRAPH_CAP: usize = 64;

#[derive(Args)]
pub struct ExportArgs {
    /// Checkpoint path prefix (without the .json/.params extension).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: ExportArgs) -> Result<u8> {
    let (model, extra) = load_checkpoint(&args.checkpoint)?;
    let provenance: Provenance = serde_json::from_value(extra)
        .map_err(|e| anyhow!("checkpoint provenance unreadable: {e}"))?;
    let mut data = load_from_path(&args.dataset)?;

    let (embeddings, labels, diagnostics) = match &mut data {
        LoadedDataset::Node(ds) => {
            preprocess_node(
                ds,
                provenance.row_normalize,
                provenance.missing_features,
                provenance.master_seed,
            );
            let tape = Tape::new();
            let trace = model.eval_trace_node(&tape, ds);
            let labels: Vec<String> = ds.labels.iter().map(|l| l.to_string()).collect();
            let layers: Vec<_> = trace.layer_outputs.iter().map(|t| t.value()).collect();
            (layers, labels, layer_diagnostics_node(&model, ds))
        }
        LoadedDataset::Graph(ds) => {
            let selected: Vec<&Graph> = ds.graphs.iter().collect();
            let batch = merge_graphs(&selected);
            let tape = Tape::new();
            let trace = model.eval_trace_graph(&tape, &batch);
            // per-node label: the owning graph's target
            let mut labels = Vec::with_capacity(batch.features.rows());
            for (g, graph) in ds.graphs.iter().enumerate() {
                let label = match &ds.targets {
                    GraphTargets::Classes(c) => c[g].to_string(),
                    GraphTargets::Reals(r) => r[g].to_string(),
                };
                labels.extend(std::iter::repeat_n(label, graph.num_nodes()));
            }
            let layers: Vec<_> = trace.layer_outputs.iter().map(|t| t.value()).collect();
            (
                layers,
                labels,
                layer_diagnostics_graph(&model, ds, DIAGNOSTIC_GRAPH_CAP),
            )
        }
    };

    for (l, h) in embeddings.iter().enumerate() {
        let mut tsv = String::from("node_id\tlabel");
        for c in 0..h.cols() {
            tsv.push_str(&format!("\te{c}"));
        }
        tsv.push('\n');
        for (r, label) in labels.iter().enumerate() {
            tsv.push_str(&format!("{r}\t{label}"));
            for &v in h.row(r) {
                tsv.push_str(&format!("\t{v}"));
            }
            tsv.push('\n');
        }
        write_file(&args.out.join(format!("layer_{:02}.tsv", l + 1)), &tsv)?;
    }
    write_file(
        &args.out.join("diagnostics.csv"),
        &diagnostics_csv(&diagnostics),
    )?;
    println!(
        "exported {} layer embedding file(s) and diagnostics.csv to {}",
        embeddings.len(),
        args.out.display()
    );
    Ok(0)
}
