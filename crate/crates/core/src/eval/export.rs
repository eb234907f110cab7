//! CSV exports: node embeddings and hard-negative degree samples.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;

use crate::encoders::Model;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::graph::Graph;
use crate::losses::top_k_hard_negatives;
use crate::matrix::{dot, Matrix};
use crate::par;
use crate::rng;

/// `node_id,label,degree,e_0..e_{P-1}`; missing labels are written as -1.
/// Floats use the shortest representation that round-trips exactly.
pub fn embeddings_csv(graph: &Graph, embeddings: &Matrix) -> Result<String> {
    if embeddings.rows() != graph.num_nodes() {
        return Err(Error::shape(
            "export embeddings",
            format!("{} rows for {} nodes", embeddings.rows(), graph.num_nodes()),
        ));
    }
    let degrees = graph.degrees();
    let mut out = String::from("node_id,label,degree");
    for c in 0..embeddings.cols() {
        write!(out, ",e_{c}").unwrap();
    }
    out.push('\n');
    for i in 0..graph.num_nodes() {
        let label = graph.labels()[i].map_or(-1, |l| l as i64);
        write!(out, "{i},{label},{}", degrees.get(i)).unwrap();
        for v in embeddings.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Encoder embeddings of the unaugmented graph, written to `path`.
pub fn export_embeddings(model: &Model, graph: &Graph, path: &Path) -> Result<Matrix> {
    let h = model.embed_graph(graph)?;
    fsutil::write_atomic(path, embeddings_csv(graph, &h)?.as_bytes())?;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub node_ids: Vec<usize>,
    pub labels: Vec<Option<usize>>,
    pub degrees: Vec<usize>,
    pub embeddings: Matrix,
}

pub fn read_embeddings_csv(text: &str) -> Result<EmbeddingTable> {
    let bad = |line: usize, what: &str| Error::Data(format!("embeddings.csv line {line}: {what}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let width = header.split(',').count();
    if width < 3 || !header.starts_with("node_id,label,degree") {
        return Err(bad(1, "unexpected header"));
    }
    let mut t = EmbeddingTable {
        node_ids: vec![],
        labels: vec![],
        degrees: vec![],
        embeddings: Matrix::zeros(0, 0),
    };
    let mut data = Vec::new();
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(bad(k + 2, "wrong field count"));
        }
        t.node_ids.push(fields[0].parse().map_err(|_| bad(k + 2, "node_id"))?);
        let label: i64 = fields[1].parse().map_err(|_| bad(k + 2, "label"))?;
        t.labels.push((label >= 0).then_some(label as usize));
        t.degrees.push(fields[2].parse().map_err(|_| bad(k + 2, "degree"))?);
        for f in &fields[3..] {
            data.push(f.parse::<f64>().map_err(|_| bad(k + 2, "value"))?);
        }
    }
    t.embeddings = Matrix::from_vec(t.node_ids.len(), width - 3, data)?;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardNegativeRow {
    pub anchor: usize,
    pub rank: usize,
    pub negative: usize,
    pub negative_degree: usize,
    pub similarity: f64,
    pub epoch: usize,
    /// Degree of a uniformly drawn negative of the same anchor.
    pub baseline_degree: usize,
}

pub const HARD_NEGATIVE_HEADER: &str =
    "anchor_node,rank,negative_node,negative_degree,similarity,epoch,baseline_degree";

fn unit_rows(z: &Matrix) -> Matrix {
    let mut u = z.clone();
    for i in 0..u.rows() {
        let row = u.row_mut(i);
        let norm = dot(row, row).sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    u
}

/// Top-`k` hard negatives of every anchor under `model` on the unaugmented
/// graph. Similarities are `S` entries, `2 exp(cos/τ)`, since both views
/// coincide.
pub fn hard_negative_rows(
    model: &Model,
    graph: &Graph,
    labels: &[usize],
    k: usize,
    tau: f64,
    epoch: usize,
    seed: u64,
) -> Result<Vec<HardNegativeRow>> {
    if k == 0 {
        return Err(Error::Config("hard-negative k must be >= 1".into()));
    }
    crate::losses::HarConfig::new(tau, 1.0, 1.0, 2).validate()?;
    if labels.len() != graph.num_nodes() {
        return Err(Error::shape(
            "hard negatives",
            format!("{} labels for {} nodes", labels.len(), graph.num_nodes()),
        ));
    }
    let op = crate::encoders::GraphOperator::for_encoder(model.spec().encoder, &graph.adjacency());
    let z = unit_rows(&model.embed_projected(&op, graph.features())?);
    let degrees = graph.degrees();
    let anchors: Vec<usize> = (0..graph.num_nodes()).collect();
    let per_anchor = par::map(&anchors, |&i| {
        let row: Vec<f64> = (0..z.rows())
            .map(|j| {
                if labels[j] == labels[i] {
                    0.0
                } else {
                    2.0 * (dot(z.row(i), z.row(j)) / tau).exp()
                }
            })
            .collect();
        let top = top_k_hard_negatives(&row, k);
        let negatives: Vec<usize> = (0..row.len()).filter(|&j| labels[j] != labels[i]).collect();
        let mut rng = rng::stream(seed, &[rng::ids::HARD_NEG_BASELINE, epoch as u64, i as u64]);
        top.iter()
            .enumerate()
            .map(|(rank, &j)| HardNegativeRow {
                anchor: i,
                rank: rank + 1,
                negative: j,
                negative_degree: degrees.get(j),
                similarity: row[j],
                epoch,
                baseline_degree: degrees.get(negatives[rng.gen_range(0..negatives.len())]),
            })
            .collect::<Vec<_>>()
    });
    Ok(per_anchor.into_iter().flatten().collect())
}

pub fn hard_negatives_csv(rows: &[HardNegativeRow]) -> String {
    let mut out = format!("{HARD_NEGATIVE_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.anchor, r.rank, r.negative, r.negative_degree, r.similarity, r.epoch, r.baseline_degree
        )
        .unwrap();
    }
    out
}

/// Hard-negative rows for each `(epoch, checkpoint)` pair, written as one CSV.
pub fn hard_negative_degree_export(
    checkpoints: &[(usize, Model)],
    graph: &Graph,
    labels: &[usize],
    k: usize,
    tau: f64,
    seed: u64,
    path: &Path,
) -> Result<Vec<HardNegativeRow>> {
    let mut rows = Vec::new();
    for (epoch, model) in checkpoints {
        rows.extend(hard_negative_rows(model, graph, labels, k, tau, *epoch, seed)?);
    }
    fsutil::write_atomic(path, hard_negatives_csv(&rows).as_bytes())?;
    Ok(rows)
}
