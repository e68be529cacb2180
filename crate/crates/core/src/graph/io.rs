//! Plain-text dataset formats.
//!
//! Node dataset directory:
//! - `edges.tsv`: two whitespace-separated 0-based node ids per line
//! - `features.csv`: N rows of comma-separated reals
//! - `labels.csv`: N rows, one integer each, -1 for unlabeled
//! - `splits.json`: `{"train": [...], "val": [...], "test": [...]}`
//!
//! Graph dataset file (JSONL): a header line
//! `{"task": "classification"|"regression", "feature_dim": d}` followed by
//! one graph per line:
//! `{"edges": [[u, v], ...], "features": [[...], ...], "target": <int|real>}`.

use super::dataset::{GraphTargets, Splits, UNLABELED};
use super::{Graph, GraphDataset, GraphError, GraphTask, NodeDataset};
use crate::autodiff::Matrix;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

fn read_file(path: &Path) -> Result<String, GraphError> {
    if !path.exists() {
        return Err(GraphError::MissingFile(path.display().to_string()));
    }
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

#[derive(Serialize, Deserialize)]
struct SplitsFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// Loads a node dataset from a directory in the documented layout.
///
/// Edges are symmetrized and deduplicated; the node count comes from
/// `features.csv`; split overlap and out-of-range indices are rejected.
pub fn load_node_dataset(dir: &Path) -> Result<NodeDataset, GraphError> {
    let features_path = dir.join("features.csv");
    let features_text = read_file(&features_path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in features_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| parse_err(&features_path, lineno + 1, e.to_string()))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    &features_path,
                    lineno + 1,
                    format!("expected {} features, got {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(&features_path, 1, "no feature rows"));
    }
    let num_nodes = rows.len();
    let features = Matrix::from_rows(&rows);

    let edges_path = dir.join("edges.tsv");
    let edges_text = read_file(&edges_path)?;
    let mut edges = Vec::new();
    for (lineno, line) in edges_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (u, v) = match (parts.next(), parts.next(), parts.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => return Err(parse_err(&edges_path, lineno + 1, "expected two columns")),
        };
        let u: usize = u.parse().map_err(|e: std::num::ParseIntError| {
            parse_err(&edges_path, lineno + 1, e.to_string())
        })?;
        let v: usize = v.parse().map_err(|e: std::num::ParseIntError| {
            parse_err(&edges_path, lineno + 1, e.to_string())
        })?;
        if u >= num_nodes || v >= num_nodes {
            return Err(parse_err(
                &edges_path,
                lineno + 1,
                format!("node index {} out of range for {num_nodes} nodes", u.max(v)),
            ));
        }
        edges.push((u, v));
    }
    let graph = Graph::new(num_nodes, &edges, features)?;

    let labels_path = dir.join("labels.csv");
    let labels_text = read_file(&labels_path)?;
    let mut labels = Vec::with_capacity(num_nodes);
    for (lineno, line) in labels_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let l: i64 = line.parse().map_err(|e: std::num::ParseIntError| {
            parse_err(&labels_path, lineno + 1, e.to_string())
        })?;
        if l < UNLABELED {
            return Err(parse_err(
                &labels_path,
                lineno + 1,
                format!("bad label {l}"),
            ));
        }
        labels.push(l);
    }
    if labels.len() != num_nodes {
        return Err(parse_err(
            &labels_path,
            labels.len() + 1,
            format!("expected {num_nodes} labels, got {}", labels.len()),
        ));
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0)) as usize;

    let splits_path = dir.join("splits.json");
    let splits_text = read_file(&splits_path)?;
    let splits: SplitsFile = serde_json::from_str(&splits_text)
        .map_err(|e| parse_err(&splits_path, e.line(), e.to_string()))?;
    let splits = Splits {
        train: splits.train,
        val: splits.val,
        test: splits.test,
    };

    NodeDataset::new(graph, labels, num_classes, splits)
}

/// Writes a node dataset in the directory layout read by
/// [`load_node_dataset`]. Output is byte-deterministic for a given dataset.
pub fn save_node_dataset(ds: &NodeDataset, dir: &Path) -> Result<(), GraphError> {
    fs::create_dir_all(dir).map_err(|source| GraphError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let write = |name: &str, contents: String| -> Result<(), GraphError> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        f.write_all(contents.as_bytes())
            .map_err(|source| GraphError::Io {
                path: path.display().to_string(),
                source,
            })
    };

    let mut edges = String::new();
    for (u, v) in ds.graph.edges().undirected_edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write("edges.tsv", edges)?;

    let mut features = String::new();
    for r in 0..ds.graph.num_nodes() {
        let row: Vec<String> = ds
            .graph
            .features()
            .row(r)
            .iter()
            .map(f64::to_string)
            .collect();
        features.push_str(&row.join(","));
        features.push('\n');
    }
    write("features.csv", features)?;

    let labels: String = ds.labels.iter().map(|l| format!("{l}\n")).collect();
    write("labels.csv", labels)?;

    let splits = SplitsFile {
        train: ds.splits.train.clone(),
        val: ds.splits.val.clone(),
        test: ds.splits.test.clone(),
    };
    write(
        "splits.json",
        serde_json::to_string_pretty(&splits).expect("splits serialize"),
    )?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GraphFileHeader {
    task: GraphTask,
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphLine {
    edges: Vec<(usize, usize)>,
    features: Vec<Vec<f64>>,
    target: f64,
}

/// Loads a graph dataset from a JSONL file with a header line.
pub fn load_graph_dataset(path: &Path) -> Result<GraphDataset, GraphError> {
    let text = read_file(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file; expected a header line"))?;
    let header: GraphFileHeader = serde_json::from_str(header_line)
        .map_err(|e| parse_err(path, 1, format!("bad header: {e}")))?;

    let mut graphs = Vec::new();
    let mut classes = Vec::new();
    let mut reals = Vec::new();
    for (lineno, line) in lines {
        let parsed: GraphLine =
            serde_json::from_str(line).map_err(|e| parse_err(path, lineno + 1, e.to_string()))?;
        let num_nodes = parsed.features.len();
        if num_nodes == 0 {
            return Err(parse_err(path, lineno + 1, "graph has no nodes"));
        }
        for row in &parsed.features {
            if row.len() != header.feature_dim {
                return Err(parse_err(
                    path,
                    lineno + 1,
                    format!(
                        "feature row of width {} does not match feature_dim {}",
                        row.len(),
                        header.feature_dim
                    ),
                ));
            }
        }
        let features = Matrix::from_rows(&parsed.features);
        let graph = Graph::new(num_nodes, &parsed.edges, features)
            .map_err(|e| parse_err(path, lineno + 1, e.to_string()))?;
        graphs.push(graph);
        match header.task {
            GraphTask::Classification => {
                if parsed.target < 0.0 || parsed.target.fract() != 0.0 {
                    return Err(parse_err(
                        path,
                        lineno + 1,
                        format!(
                            "classification target must be a non-negative integer, got {}",
                            parsed.target
                        ),
                    ));
                }
                classes.push(parsed.target as usize);
            }
            GraphTask::Regression => reals.push(parsed.target),
        }
    }

    let (targets, num_classes) = match header.task {
        GraphTask::Classification => {
            let num_classes = classes.iter().max().map_or(0, |&c| c + 1);
            (GraphTargets::Classes(classes), num_classes)
        }
        GraphTask::Regression => (GraphTargets::Reals(reals), 0),
    };
    if graphs.is_empty() {
        return Err(parse_err(path, 2, "no graphs after header"));
    }
    Ok(GraphDataset {
        graphs,
        targets,
        task: header.task,
        num_classes,
    })
}

/// Writes a graph dataset in the JSONL format read by [`load_graph_dataset`].
pub fn save_graph_dataset(ds: &GraphDataset, path: &Path) -> Result<(), GraphError> {
    let header = GraphFileHeader {
        task: ds.task,
        feature_dim: ds.feature_dim(),
    };
    let mut out = serde_json::to_string(&header).expect("header serialize");
    out.push('\n');
    for (i, g) in ds.graphs.iter().enumerate() {
        let target = match &ds.targets {
            GraphTargets::Classes(c) => c[i] as f64,
            GraphTargets::Reals(r) => r[i],
        };
        let line = GraphLine {
            edges: g.edges().undirected_edges(),
            features: (0..g.num_nodes())
                .map(|v| g.features().row(v).to_vec())
                .collect(),
            target,
        };
        out.push_str(&serde_json::to_string(&line).expect("graph serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}
