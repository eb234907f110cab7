//! Undirected attributed graphs, degrees, splits and subgraphs.

mod io;
mod split;
mod synthetic;

pub use io::{load_graph, load_splits, save_graph, PublishedSplit, FORMAT_VERSION};
pub use split::{induced_subgraph, split_from_published, split_nodes, DataSplit, NodeRemap};
pub use synthetic::PlantedPartition;

use crate::error::{Error, Result};
use crate::matrix::{Csr, Matrix};

/// Node features, an undirected loop-free edge set and optional labels.
///
/// Edges are kept once per pair in canonical `(i, j)` with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    features: Matrix,
    edges: Vec<(usize, usize)>,
    labels: Vec<Option<usize>>,
    num_classes: usize,
}

impl Graph {
    /// Validate and canonicalize. `labels` may be empty for an unlabelled graph.
    pub fn new(
        features: Matrix,
        edges: Vec<(usize, usize)>,
        labels: Vec<Option<usize>>,
        num_classes: usize,
    ) -> Result<Graph> {
        let n = features.rows();
        if n > 0 && features.cols() == 0 {
            return Err(Error::Data("features need at least one column".into()));
        }
        if !features.all_finite() {
            return Err(Error::Data("non-finite feature value".into()));
        }
        let labels = if labels.is_empty() {
            vec![None; n]
        } else {
            labels
        };
        if labels.len() != n {
            return Err(Error::Data(format!(
                "row-count mismatch: {} labels for {n} nodes",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&y| y >= num_classes) {
            return Err(Error::Data(format!(
                "label out of range: {bad} with {num_classes} classes"
            )));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Data(format!(
                    "edge index out of range: ({a},{b}) with {n} nodes"
                )));
            }
            if a == b {
                return Err(Error::Data(format!("self-loop on node {a}")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Data(format!(
                "duplicate edge ({},{})",
                w[0].0, w[0].1
            )));
        }
        Ok(Graph {
            features,
            edges: canon,
            labels,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn has_labels(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }

    /// All labels, or an error naming the first unlabelled node.
    pub fn complete_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, y)| y.ok_or_else(|| Error::Data(format!("missing label for node {i}"))))
            .collect()
    }

    /// Same structure and features with labels replaced.
    pub fn with_labels(&self, labels: Vec<Option<usize>>) -> Result<Graph> {
        Graph::new(
            self.features.clone(),
            self.edges.clone(),
            labels,
            self.num_classes,
        )
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency::from_edges(self.num_nodes(), &self.edges)
    }

    pub fn degrees(&self) -> DegreeTable {
        compute_degrees(self)
    }
}

/// Raw symmetric 0/1 adjacency with an empty diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency(Csr);

impl Adjacency {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Adjacency {
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(i, j) in edges {
            triplets.push((i, j, 1.0));
            triplets.push((j, i, 1.0));
        }
        Adjacency(Csr::from_triplets(n, n, triplets).expect("edges validated by Graph"))
    }

    /// Wrap a CSR matrix, checking symmetry, 0/1 entries and an empty diagonal.
    pub fn from_csr(csr: Csr) -> Result<Adjacency> {
        if !csr.is_symmetric() {
            return Err(Error::Data("adjacency is not symmetric".into()));
        }
        for r in 0..csr.rows() {
            let (cols, vals) = csr.row(r);
            if cols.contains(&r) || vals.iter().any(|&v| v != 1.0) {
                return Err(Error::Data(format!("adjacency row {r} is not loop-free 0/1")));
            }
        }
        Ok(Adjacency(csr))
    }

    pub fn num_nodes(&self) -> usize {
        self.0.rows()
    }

    pub fn csr(&self) -> &Csr {
        &self.0
    }

    /// Undirected pairs `(i, j)` with `i < j`, sorted.
    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.0.nnz() / 2);
        for i in 0..self.num_nodes() {
            let (cols, _) = self.0.row(i);
            out.extend(cols.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.0.nnz() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.0.row(i).0
    }
}

/// Number of incident edges per node in the raw graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeTable(Vec<usize>);

impl DegreeTable {
    pub fn get(&self, node: usize) -> usize {
        self.0[node]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn compute_degrees(graph: &Graph) -> DegreeTable {
    let mut deg = vec![0usize; graph.num_nodes()];
    for &(i, j) in graph.edges() {
        deg[i] += 1;
        deg[j] += 1;
    }
    DegreeTable(deg)
}
