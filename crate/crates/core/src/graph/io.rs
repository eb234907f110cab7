//! Directory-based dataset format.
//!
//! ```text
//! meta.json     {"format_version":1,"num_nodes":N,"num_features":M,"num_classes":C,"num_edges":E}
//! features.bin  N*M little-endian f32, row-major
//! edges.csv     "i,j" per line, i<j, no header
//! labels.csv    one class id per line, -1 when absent
//! splits.json   optional {"train":[..],"val":[..],"test":[..]}
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::matrix::Matrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
    num_edges: usize,
}

/// Train/val/test node sets shipped with a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn required(dir: &Path, name: &str) -> Result<std::path::PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::Data(format!("missing file {}", p.display())))
    }
}

pub fn load_graph(dir: &Path) -> Result<Graph> {
    let meta_text = fsutil::read_to_string(&required(dir, "meta.json")?)?;
    let meta: Meta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Data(format!("meta.json: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unknown format version {}",
            meta.format_version
        )));
    }
    let (n, m) = (meta.num_nodes, meta.num_features);

    let raw = fsutil::read(&required(dir, "features.bin")?)?;
    if raw.len() != n * m * 4 {
        return Err(Error::Data(format!(
            "row-count mismatch: features.bin holds {} floats, expected {n}x{m}",
            raw.len() / 4
        )));
    }
    let values = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let features = Matrix::from_vec(n, m, values)?;

    let edges_text = fsutil::read_to_string(&required(dir, "edges.csv")?)?;
    let mut edges = Vec::new();
    for (lineno, line) in edges_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|t| t.trim().parse().ok()).ok_or_else(|| {
                Error::Data(format!("edges.csv line {}: bad pair {line:?}", lineno + 1))
            })
        };
        let mut parts = line.split(',');
        let i = parse(parts.next())?;
        let j = parse(parts.next())?;
        if i >= n || j >= n {
            return Err(Error::Data(format!(
                "edge index out of range: ({i},{j}) with {n} nodes"
            )));
        }
        if i >= j {
            return Err(Error::Data(format!(
                "edges.csv line {}: expected i<j, got ({i},{j})",
                lineno + 1
            )));
        }
        edges.push((i, j));
    }
    if edges.len() != meta.num_edges {
        return Err(Error::Data(format!(
            "edge-count mismatch: {} in edges.csv, meta says {}",
            edges.len(),
            meta.num_edges
        )));
    }

    let labels_text = fsutil::read_to_string(&required(dir, "labels.csv")?)?;
    let mut labels = Vec::with_capacity(n);
    for (lineno, line) in labels_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: i64 = line
            .parse()
            .map_err(|_| Error::Data(format!("labels.csv line {}: {line:?}", lineno + 1)))?;
        labels.push(if v < 0 { None } else { Some(v as usize) });
    }
    if labels.len() != n {
        return Err(Error::Data(format!(
            "row-count mismatch: {} labels for {n} nodes",
            labels.len()
        )));
    }

    let graph = Graph::new(features, edges, labels, meta.num_classes)?;
    debug_assert_eq!(graph.degrees().total(), 2 * graph.num_edges());
    Ok(graph)
}

/// Read `splits.json` if present.
pub fn load_splits(dir: &Path) -> Result<Option<PublishedSplit>> {
    let p = dir.join("splits.json");
    if !p.is_file() {
        return Ok(None);
    }
    let split: PublishedSplit = serde_json::from_str(&fsutil::read_to_string(&p)?)
        .map_err(|e| Error::Data(format!("splits.json: {e}")))?;
    Ok(Some(split))
}

/// Write `graph` (and optionally a split) in the directory format.
pub fn save_graph(graph: &Graph, dir: &Path, split: Option<&PublishedSplit>) -> Result<()> {
    let meta = Meta {
        format_version: FORMAT_VERSION,
        num_nodes: graph.num_nodes(),
        num_features: graph.num_features(),
        num_classes: graph.num_classes(),
        num_edges: graph.num_edges(),
    };
    let meta_json = serde_json::to_string(&meta).expect("meta serializes");
    fsutil::write_atomic(&dir.join("meta.json"), meta_json.as_bytes())?;

    let mut bytes = Vec::with_capacity(graph.features().len() * 4);
    for &v in graph.features().as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fsutil::write_atomic(&dir.join("features.bin"), &bytes)?;

    let mut edges = String::new();
    for &(i, j) in graph.edges() {
        writeln!(edges, "{i},{j}").expect("string write");
    }
    fsutil::write_atomic(&dir.join("edges.csv"), edges.as_bytes())?;

    let mut labels = String::new();
    for y in graph.labels() {
        match y {
            Some(c) => writeln!(labels, "{c}"),
            None => writeln!(labels, "-1"),
        }
        .expect("string write");
    }
    fsutil::write_atomic(&dir.join("labels.csv"), labels.as_bytes())?;

    if let Some(split) = split {
        let text = serde_json::to_string(split).expect("split serializes");
        fsutil::write_atomic(&dir.join("splits.json"), text.as_bytes())?;
    }
    Ok(())
}
