use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Graph, PublishedSplit};
use crate::error::{Error, Result};
use crate::rng;

/// Node index sets for the two-step pipeline. All sets are sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_labelled: Vec<usize>,
    pub train_unlabelled: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub unlabelled_fraction: f64,
    pub seed: u64,
}

impl DataSplit {
    pub fn train_len(&self) -> usize {
        self.train_labelled.len() + self.train_unlabelled.len()
    }

    /// Check disjointness, bounds and the unlabelled-count rule.
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = vec![false; num_nodes];
        for set in [
            &self.train_labelled,
            &self.train_unlabelled,
            &self.val,
            &self.test,
        ] {
            for &v in set {
                if v >= num_nodes {
                    return Err(Error::Data(format!("split index {v} out of range")));
                }
                if std::mem::replace(&mut seen[v], true) {
                    return Err(Error::Data(format!("node {v} appears in two split sets")));
                }
            }
        }
        let expected = unlabelled_count(self.train_len(), self.unlabelled_fraction);
        if self.train_unlabelled.len() != expected {
            return Err(Error::Data(format!(
                "unlabelled split has {} nodes, expected {expected}",
                self.train_unlabelled.len()
            )));
        }
        Ok(())
    }
}

fn unlabelled_count(train_len: usize, r: f64) -> usize {
    (r * train_len as f64).round() as usize
}

fn check_r(r: f64) -> Result<()> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Config(format!(
            "unlabelled fraction r={r} out of [0,1)"
        )));
    }
    Ok(())
}

/// Carve the unlabelled subset out of `train` uniformly at random.
fn carve_unlabelled(
    mut train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    r: f64,
    seed: u64,
) -> DataSplit {
    let u = unlabelled_count(train.len(), r);
    train.sort_unstable();
    let mut stream = rng::stream(seed, &[rng::ids::SPLIT, 1]);
    train.shuffle(&mut stream);
    let mut unlabelled = train.split_off(train.len() - u);
    train.sort_unstable();
    unlabelled.sort_unstable();
    let (mut val, mut test) = (val, test);
    val.sort_unstable();
    test.sort_unstable();
    DataSplit {
        train_labelled: train,
        train_unlabelled: unlabelled,
        val,
        test,
        unlabelled_fraction: r,
        seed,
    }
}

/// Random train/val/test split over all nodes; the test set takes the rest.
pub fn split_nodes(
    graph: &Graph,
    train_frac: f64,
    val_frac: f64,
    r: f64,
    seed: u64,
) -> Result<DataSplit> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction {train_frac} out of (0,1)")));
    }
    if !(0.0..1.0).contains(&val_frac) || train_frac + val_frac > 1.0 + 1e-12 {
        return Err(Error::Config(format!(
            "val fraction {val_frac} out of range for train fraction {train_frac}"
        )));
    }
    check_r(r)?;
    let n = graph.num_nodes();
    let n_train = ((train_frac * n as f64).round() as usize).min(n);
    let n_val = ((val_frac * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stream = rng::stream(seed, &[rng::ids::SPLIT, 0]);
    order.shuffle(&mut stream);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(carve_unlabelled(order, val, test, r, seed))
}

/// Use a dataset's published train/val/test sets and carve the unlabelled part.
pub fn split_from_published(
    graph: &Graph,
    published: &PublishedSplit,
    r: f64,
    seed: u64,
) -> Result<DataSplit> {
    check_r(r)?;
    let split = carve_unlabelled(
        published.train.clone(),
        published.val.clone(),
        published.test.clone(),
        r,
        seed,
    );
    split.validate(graph.num_nodes())?;
    Ok(split)
}

/// Old/new index correspondence of an induced subgraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRemap {
    new_to_old: Vec<usize>,
    old_to_new: Vec<Option<usize>>,
}

impl NodeRemap {
    pub fn to_old(&self, new: usize) -> usize {
        self.new_to_old[new]
    }

    pub fn to_new(&self, old: usize) -> Option<usize> {
        self.old_to_new.get(old).copied().flatten()
    }

    pub fn new_to_old(&self) -> &[usize] {
        &self.new_to_old
    }

    pub fn len(&self) -> usize {
        self.new_to_old.len()
    }

    pub fn is_empty(&self) -> bool {
        self.new_to_old.is_empty()
    }
}

/// Subgraph on `nodes`; new index `k` corresponds to `nodes[k]`.
pub fn induced_subgraph(graph: &Graph, nodes: &[usize]) -> Result<(Graph, NodeRemap)> {
    let n = graph.num_nodes();
    let mut old_to_new = vec![None; n];
    for (k, &v) in nodes.iter().enumerate() {
        if v >= n {
            return Err(Error::Data(format!("subgraph index {v} out of range")));
        }
        if old_to_new[v].replace(k).is_some() {
            return Err(Error::Data(format!("subgraph index {v} repeated")));
        }
    }
    let m = graph.num_features();
    let mut features = Vec::with_capacity(nodes.len() * m);
    for &v in nodes {
        features.extend_from_slice(graph.features().row(v));
    }
    let features = crate::matrix::Matrix::from_vec(nodes.len(), m, features)?;
    let edges = graph
        .edges()
        .iter()
        .filter_map(|&(i, j)| Some((old_to_new[i]?, old_to_new[j]?)))
        .collect();
    let labels = nodes.iter().map(|&v| graph.labels()[v]).collect();
    let sub = Graph::new(features, edges, labels, graph.num_classes())?;
    Ok((
        sub,
        NodeRemap {
            new_to_old: nodes.to_vec(),
            old_to_new,
        },
    ))
}
