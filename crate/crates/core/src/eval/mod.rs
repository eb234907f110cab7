//! Linear-probe evaluation, degree-level F1 tables and report exports.

mod degree;
mod export;
mod metrics;
mod probe;

pub use degree::{degree_report, DegreeBucket, DegreeReport, DegreeRow, MAX_EXACT_DEGREE};
pub use export::{
    embeddings_csv, export_embeddings, hard_negative_degree_export, hard_negative_rows, hard_negatives_csv,
    read_embeddings_csv, EmbeddingTable, HardNegativeRow, HARD_NEGATIVE_HEADER,
};
pub use metrics::{accuracy, f1_scores, ClassScores, F1Scores};
pub use probe::{probe_objective, LogisticProbe, ProbeConfig};

use serde::{Deserialize, Serialize};

use crate::encoders::Model;
use crate::error::{Error, Result};
use crate::graph::{DataSplit, Graph};
use crate::matrix::Matrix;
use crate::par;

/// Global and degree-level scores on one node set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub scores: F1Scores,
    pub degree: DegreeReport,
    pub nodes: Vec<usize>,
    pub predictions: Vec<usize>,
}

fn gather(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(rows.len() * m.cols());
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    Matrix::from_vec(rows.len(), m.cols(), data).expect("sized buffer")
}

fn labels_of(graph: &Graph, nodes: &[usize], what: &str) -> Result<Vec<usize>> {
    nodes
        .iter()
        .map(|&v| graph.labels()[v].ok_or_else(|| Error::Data(format!("{what} node {v} has no label"))))
        .collect()
}

/// Fit a probe on `train` rows of `embeddings` and score `eval` rows.
/// Degrees come from the raw graph.
pub fn evaluate_embeddings(
    embeddings: &Matrix,
    graph: &Graph,
    train: &[usize],
    eval: &[usize],
    probe: ProbeConfig,
    reference: Option<&DegreeReport>,
) -> Result<Evaluation> {
    if embeddings.rows() != graph.num_nodes() {
        return Err(Error::shape(
            "evaluate",
            format!("{} embeddings for {} nodes", embeddings.rows(), graph.num_nodes()),
        ));
    }
    let y_train = labels_of(graph, train, "training")?;
    let y_eval = labels_of(graph, eval, "evaluation")?;
    let fitted = LogisticProbe::fit(&gather(embeddings, train), &y_train, graph.num_classes(), probe)?;
    let predictions = fitted.predict(&gather(embeddings, eval))?;
    let scores = f1_scores(&predictions, &y_eval)?;
    let degrees = graph.degrees();
    let deg: Vec<usize> = eval.iter().map(|&v| degrees.get(v)).collect();
    let degree = degree_report(&predictions, &y_eval, &deg, reference)?;
    Ok(Evaluation {
        scores,
        degree,
        nodes: eval.to_vec(),
        predictions,
    })
}

/// Embed the full unaugmented graph, fit on the labelled train split and
/// score the test split.
pub fn evaluate_checkpoint(
    model: &Model,
    graph: &Graph,
    split: &DataSplit,
    probe: ProbeConfig,
    reference: Option<&DegreeReport>,
) -> Result<Evaluation> {
    let h = model.embed_graph(graph)?;
    evaluate_embeddings(&h, graph, &split.train_labelled, &split.test, probe, reference)
}

/// One line of `global.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRow {
    pub model: String,
    pub dataset: String,
    pub encoder: String,
    pub r: f64,
    pub seed: u64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

pub const GLOBAL_HEADER: &str = "model,dataset,encoder,r,seed,micro_f1,macro_f1";

pub fn global_csv(rows: &[GlobalRow]) -> String {
    let mut out = format!("{GLOBAL_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model, r.dataset, r.encoder, r.r, r.seed, r.micro_f1, r.macro_f1
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary { mean: f64::NAN, std: f64::NAN, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, std, n }
}

/// Bucket-wise mean F1 across runs (empty buckets are skipped per run).
/// Counts are taken from the first report.
pub fn mean_degree_report(reports: &[DegreeReport]) -> Option<DegreeReport> {
    let first = reports.first()?;
    let rows = first
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let vals: Vec<f64> = reports.iter().filter_map(|r| r.rows[k].f1).collect();
            DegreeRow {
                bucket: row.bucket,
                count: row.count,
                f1: (!vals.is_empty()).then(|| summarize(&vals).mean),
                delta_pct: None,
            }
        })
        .collect();
    Some(DegreeReport { rows })
}

/// Run `f` once per seed, in parallel when enabled. Results keep seed order.
pub fn run_seeds<T, F>(seeds: &[u64], f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    par::map(seeds, |&s| f(s))
}
