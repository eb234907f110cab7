//! Planted-partition graphs with class-correlated features.

use rand::Rng as _;

use super::Graph;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedPartition {
    pub nodes: usize,
    pub classes: usize,
    pub features: usize,
    /// Edge probability within a class.
    pub p_in: f64,
    /// Edge probability across classes.
    pub p_out: f64,
    /// Magnitude of the class block added to uniform `[-1, 1]` noise.
    pub signal: f64,
}

impl PlantedPartition {
    /// Node `i` gets class `i % classes`. Feature column `c` carries the
    /// signal for class `c % classes`.
    pub fn generate(&self, seed: u64) -> Result<Graph> {
        if self.nodes == 0 || self.classes == 0 || self.features == 0 {
            return Err(Error::Config("planted partition needs nodes, classes and features >= 1".into()));
        }
        for p in [self.p_in, self.p_out] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("edge probability {p} out of [0,1]")));
            }
        }
        let mut rng = rng::stream(seed, &[0x5EED]);
        let label = |i: usize| i % self.classes;
        let mut edges = Vec::new();
        for i in 0..self.nodes {
            for j in i + 1..self.nodes {
                let p = if label(i) == label(j) { self.p_in } else { self.p_out };
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let mut x = Matrix::zeros(self.nodes, self.features);
        for i in 0..self.nodes {
            for (c, v) in x.row_mut(i).iter_mut().enumerate() {
                let noise = rng.gen_range(-1.0..=1.0);
                *v = noise + if c % self.classes == label(i) { self.signal } else { 0.0 };
            }
        }
        let labels = (0..self.nodes).map(|i| Some(label(i))).collect();
        Graph::new(x, edges, labels, self.classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labelled() {
        let spec = PlantedPartition { nodes: 30, classes: 3, features: 6, p_in: 0.3, p_out: 0.02, signal: 2.0 };
        let a = spec.generate(4).unwrap();
        assert_eq!(a.features(), spec.generate(4).unwrap().features());
        assert_eq!(a.edges(), spec.generate(4).unwrap().edges());
        assert_eq!(a.complete_labels().unwrap()[..4], [0, 1, 2, 0]);
        let intra = a.edges().iter().filter(|(i, j)| i % 3 == j % 3).count();
        assert!(intra * 2 > a.num_edges());
    }
}
