//! Stochastic edge and feature masking for contrastive views.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, Graph};
use crate::matrix::Matrix;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Probability of dropping each undirected edge.
    pub p_e: f64,
    /// Probability of zeroing each feature column.
    pub p_f: f64,
    pub seed: u64,
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_e", self.p_e), ("p_f", self.p_f)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} out of [0,1]")));
            }
        }
        Ok(())
    }
}

/// One masked copy of a graph. Row `i` always originates from node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    pub adjacency: Adjacency,
    pub features: Matrix,
}

impl AugmentedView {
    /// Unmasked view of `graph`.
    pub fn identity(graph: &Graph) -> Self {
        AugmentedView {
            adjacency: graph.adjacency(),
            features: graph.features().clone(),
        }
    }

    /// Original node a view row was derived from.
    pub fn origin(&self, row: usize) -> usize {
        row
    }
}

fn keep(rng: &mut Rng, drop_p: f64) -> bool {
    rng.gen::<f64>() >= drop_p
}

/// Keep each undirected pair independently with probability `1 - p_e`.
/// One draw per pair in canonical order, so the result stays symmetric.
pub fn mask_edges(adjacency: &Adjacency, p_e: f64, rng: &mut Rng) -> Adjacency {
    let kept: Vec<_> = adjacency
        .edge_pairs()
        .into_iter()
        .filter(|_| keep(rng, p_e))
        .collect();
    Adjacency::from_edges(adjacency.num_nodes(), &kept)
}

/// Draw a single column mask and apply it to every row.
pub fn mask_features(features: &Matrix, p_f: f64, rng: &mut Rng) -> Matrix {
    let mask: Vec<bool> = (0..features.cols()).map(|_| keep(rng, p_f)).collect();
    let mut out = features.clone();
    for r in 0..out.rows() {
        for (v, &k) in out.row_mut(r).iter_mut().zip(&mask) {
            if !k {
                *v = 0.0;
            }
        }
    }
    out
}

/// Mask edges, then features, from one stream.
pub fn augment_view(graph: &Graph, adjacency: &Adjacency, p_e: f64, p_f: f64, rng: &mut Rng) -> AugmentedView {
    let adjacency = mask_edges(adjacency, p_e, rng);
    let features = mask_features(graph.features(), p_f, rng);
    AugmentedView {
        adjacency,
        features,
    }
}

/// Two independently masked views. `stream_ids` identifies the draw (for
/// example phase and epoch); each view gets its own sub-stream of
/// `config.seed`.
pub fn augment_pair(
    graph: &Graph,
    config: &AugmentationConfig,
    stream_ids: &[u64],
) -> (AugmentedView, AugmentedView) {
    let adjacency = graph.adjacency();
    let view = |id: u64| {
        let mut ids = stream_ids.to_vec();
        ids.push(id);
        let mut rng = rng::stream(config.seed, &ids);
        augment_view(graph, &adjacency, config.p_e, config.p_f, &mut rng)
    };
    (view(0), view(1))
}
