//! Two-layer GCN / GAT encoders and the MLP projection head.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, Graph};
use crate::matrix::{Csr, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gcn,
    Gat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Prelu,
    Elu,
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}`. Only constructible from a raw [`Adjacency`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(Arc<Csr>);

impl NormalizedAdjacency {
    pub fn csr(&self) -> &Arc<Csr> {
        &self.0
    }
}

pub fn normalize_adjacency(adjacency: &Adjacency) -> NormalizedAdjacency {
    let n = adjacency.num_nodes();
    let deg: Vec<f64> = (0..n)
        .map(|i| adjacency.neighbors(i).len() as f64 + 1.0)
        .collect();
    let mut triplets = Vec::with_capacity(adjacency.csr().nnz() + n);
    for (i, &di) in deg.iter().enumerate() {
        triplets.push((i, i, 1.0 / di));
        for &j in adjacency.neighbors(i) {
            triplets.push((i, j, 1.0 / (di * deg[j]).sqrt()));
        }
    }
    NormalizedAdjacency(Arc::new(
        Csr::from_triplets(n, n, triplets).expect("indices from a valid adjacency"),
    ))
}

/// Neighborhood pattern `N(i) ∪ {i}` used by attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPattern(Arc<Csr>);

impl AttentionPattern {
    pub fn from_adjacency(adjacency: &Adjacency) -> Self {
        let n = adjacency.num_nodes();
        let mut triplets = Vec::with_capacity(adjacency.csr().nnz() + n);
        for i in 0..n {
            triplets.push((i, i, 1.0));
            triplets.extend(adjacency.neighbors(i).iter().map(|&j| (i, j, 1.0)));
        }
        AttentionPattern(Arc::new(
            Csr::from_triplets(n, n, triplets).expect("indices from a valid adjacency"),
        ))
    }

    pub fn csr(&self) -> &Arc<Csr> {
        &self.0
    }
}

/// Structure operand an encoder consumes, precomputed once per view.
#[derive(Debug, Clone)]
pub enum GraphOperator {
    Gcn(NormalizedAdjacency),
    Gat(AttentionPattern),
}

impl GraphOperator {
    pub fn for_encoder(kind: EncoderKind, adjacency: &Adjacency) -> Self {
        match kind {
            EncoderKind::Gcn => GraphOperator::Gcn(normalize_adjacency(adjacency)),
            EncoderKind::Gat => GraphOperator::Gat(AttentionPattern::from_adjacency(adjacency)),
        }
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            GraphOperator::Gcn(a) => a.0.rows(),
            GraphOperator::Gat(p) => p.0.rows(),
        }
    }
}

/// Glorot-uniform samples in `±sqrt(6 / (rows + cols))`.
pub fn init_parameters(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let bound = (6.0 / (rows + cols).max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Architecture hyperparameters, stored in checkpoint headers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub projector_dim: usize,
    pub activation: Activation,
    pub projector_activation: Activation,
    /// Attention heads in the first GAT layer.
    pub heads: usize,
    pub attention_slope: f64,
    /// Bias terms in GAT layers and the projector. GCN layers have none.
    pub bias: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.projector_dim == 0 {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        if self.encoder == EncoderKind::Gat && self.heads == 0 {
            return Err(Error::Config("GAT needs at least one head".into()));
        }
        Ok(())
    }

    /// Shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let (m, h, p) = (self.input_dim, self.hidden_dim, self.projector_dim);
        let mut shapes = match self.encoder {
            EncoderKind::Gcn => vec![(m, h), (h, h)],
            EncoderKind::Gat => {
                let k = self.heads;
                vec![
                    (m, k * h),
                    (h, k),
                    (h, k),
                    (1, k * h),
                    (k * h, h),
                    (h, 1),
                    (h, 1),
                    (1, h),
                ]
            }
        };
        if self.activation == Activation::Prelu {
            let width = match self.encoder {
                EncoderKind::Gcn => h,
                EncoderKind::Gat => self.heads * h,
            };
            shapes.push((1, width));
        }
        shapes.extend([(h, p), (1, p), (p, p), (1, p)]);
        if self.projector_activation == Activation::Prelu {
            shapes.push((1, p));
        }
        shapes
    }
}

/// Encoder and projector weights. Parameter order matches
/// [`ModelSpec::param_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Matrix>,
}

const PRELU_INIT: f64 = 0.25;

impl Model {
    pub fn init(spec: ModelSpec, rng: &mut Rng) -> Result<Model> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        let mut params = Vec::with_capacity(shapes.len());
        let layout = Layout::of(&spec);
        for (k, &(r, c)) in shapes.iter().enumerate() {
            let p = if layout.is_bias(k) {
                Matrix::zeros(r, c)
            } else if layout.is_prelu(k) {
                Matrix::filled(r, c, PRELU_INIT)
            } else {
                init_parameters(r, c, rng)
            };
            params.push(p);
        }
        Ok(Model { spec, params })
    }

    pub fn from_parts(spec: ModelSpec, params: Vec<Matrix>) -> Result<Model> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len()
            || shapes.iter().zip(&params).any(|(s, p)| *s != p.shape())
        {
            return Err(Error::Data("parameter shapes do not match model spec".into()));
        }
        if params.iter().any(|p| !p.all_finite()) {
            return Err(Error::Data("non-finite parameter".into()));
        }
        Ok(Model { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    /// Record parameters on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundModel> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundModel {
            spec: self.spec,
            layout: Layout::of(&self.spec),
            vars,
        })
    }

    /// Encoder embeddings `h` without recording gradients.
    pub fn embed(&self, operator: &GraphOperator, features: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let x = tape.constant(features.clone())?;
        let h = bound.encode(&mut tape, operator, x)?;
        Ok(tape.value(h).clone())
    }

    /// Projector outputs `z` without recording gradients.
    pub fn embed_projected(&self, operator: &GraphOperator, features: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let x = tape.constant(features.clone())?;
        let h = bound.encode(&mut tape, operator, x)?;
        let z = bound.project(&mut tape, h)?;
        Ok(tape.value(z).clone())
    }

    /// Encoder embeddings of an unmasked graph.
    pub fn embed_graph(&self, graph: &Graph) -> Result<Matrix> {
        let op = GraphOperator::for_encoder(self.spec.encoder, &graph.adjacency());
        self.embed(&op, graph.features())
    }
}

/// Index bookkeeping for the flat parameter list.
#[derive(Debug, Clone, Copy)]
struct Layout {
    encoder_prelu: Option<usize>,
    projector: usize,
    projector_prelu: Option<usize>,
    gat: bool,
}

impl Layout {
    fn of(spec: &ModelSpec) -> Layout {
        let base = match spec.encoder {
            EncoderKind::Gcn => 2,
            EncoderKind::Gat => 8,
        };
        let encoder_prelu = (spec.activation == Activation::Prelu).then_some(base);
        let encoder_len = base + usize::from(encoder_prelu.is_some());
        let projector = encoder_len;
        let projector_prelu = (spec.projector_activation == Activation::Prelu).then_some(projector + 4);
        Layout {
            encoder_prelu,
            projector,
            projector_prelu,
            gat: spec.encoder == EncoderKind::Gat,
        }
    }

    fn is_bias(&self, k: usize) -> bool {
        (self.gat && (k == 3 || k == 7)) || k == self.projector + 1 || k == self.projector + 3
    }

    fn is_prelu(&self, k: usize) -> bool {
        Some(k) == self.encoder_prelu || Some(k) == self.projector_prelu
    }
}

/// Model parameters recorded on a tape. Reusing one `BoundModel` for both
/// views ties their weights.
#[derive(Debug, Clone)]
pub struct BoundModel {
    spec: ModelSpec,
    layout: Layout,
    vars: Vec<Var>,
}

impl BoundModel {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn activate(&self, tape: &mut Tape, x: Var, act: Activation, prelu: Option<usize>) -> Result<Var> {
        match act {
            Activation::Relu => tape.relu(x),
            Activation::Elu => tape.elu(x, 1.0),
            Activation::Prelu => {
                let slope = self.vars[prelu.expect("prelu slot present")];
                tape.prelu(x, slope)
            }
        }
    }

    fn check_input(&self, tape: &Tape, operator: &GraphOperator, x: Var) -> Result<()> {
        let (n, m) = tape.shape(x);
        if n != operator.num_nodes() || m != self.spec.input_dim {
            return Err(Error::shape(
                "encoder",
                format!(
                    "features {n}x{m}, graph has {} nodes, model expects {} inputs",
                    operator.num_nodes(),
                    self.spec.input_dim
                ),
            ));
        }
        Ok(())
    }

    /// Encoder forward: embeddings `h` of shape `N x hidden_dim`.
    pub fn encode(&self, tape: &mut Tape, operator: &GraphOperator, x: Var) -> Result<Var> {
        self.check_input(tape, operator, x)?;
        match (self.spec.encoder, operator) {
            (EncoderKind::Gcn, GraphOperator::Gcn(adj)) => self.gcn(tape, adj, x),
            (EncoderKind::Gat, GraphOperator::Gat(pattern)) => self.gat(tape, pattern, x),
            _ => Err(Error::Config("graph operator does not match encoder kind".into())),
        }
    }

    fn gcn(&self, tape: &mut Tape, adj: &NormalizedAdjacency, x: Var) -> Result<Var> {
        let (w0, w1) = (self.vars[0], self.vars[1]);
        let xw = tape.matmul(x, w0)?;
        let pre = tape.sparse_dense_matmul(adj.csr(), xw)?;
        let h1 = self.activate(tape, pre, self.spec.activation, self.layout.encoder_prelu)?;
        let hw = tape.matmul(h1, w1)?;
        tape.sparse_dense_matmul(adj.csr(), hw)
    }

    fn attention_layer(
        &self,
        tape: &mut Tape,
        pattern: &AttentionPattern,
        x: Var,
        slots: [usize; 4],
        heads: usize,
    ) -> Result<Var> {
        let [w, a_src, a_dst, bias] = slots.map(|k| self.vars[k]);
        let h = self.spec.hidden_dim;
        let wx = tape.matmul(x, w)?;
        let mut outs = Vec::with_capacity(heads);
        for k in 0..heads {
            let hk = if heads == 1 { wx } else { tape.slice_cols(wx, k * h, h)? };
            let (ak_src, ak_dst) = if heads == 1 {
                (a_src, a_dst)
            } else {
                (tape.slice_cols(a_src, k, 1)?, tape.slice_cols(a_dst, k, 1)?)
            };
            let s = tape.matmul(hk, ak_src)?;
            let t = tape.matmul(hk, ak_dst)?;
            let e = tape.edge_scores(pattern.csr(), s, t)?;
            let e = tape.leaky_relu(e, self.spec.attention_slope)?;
            let alpha = tape.segment_softmax(pattern.csr(), e)?;
            outs.push(tape.edge_aggregate(pattern.csr(), alpha, hk)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        if self.spec.bias {
            tape.add(cat, bias)
        } else {
            Ok(cat)
        }
    }

    fn gat(&self, tape: &mut Tape, pattern: &AttentionPattern, x: Var) -> Result<Var> {
        let h1 = self.attention_layer(tape, pattern, x, [0, 1, 2, 3], self.spec.heads)?;
        let h1 = self.activate(tape, h1, self.spec.activation, self.layout.encoder_prelu)?;
        self.attention_layer(tape, pattern, h1, [4, 5, 6, 7], 1)
    }

    /// Projection head `act(h W0 + b0) W1 + b1`.
    pub fn project(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let base = self.layout.projector;
        let [w0, b0, w1, b1] = [0, 1, 2, 3].map(|k| self.vars[base + k]);
        let mut z = tape.matmul(h, w0)?;
        if self.spec.bias {
            z = tape.add(z, b0)?;
        }
        let z = self.activate(tape, z, self.spec.projector_activation, self.layout.projector_prelu)?;
        let mut out = tape.matmul(z, w1)?;
        if self.spec.bias {
            out = tape.add(out, b1)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn spec(kind: EncoderKind, m: usize, h: usize) -> ModelSpec {
        ModelSpec {
            encoder: kind,
            input_dim: m,
            hidden_dim: h,
            projector_dim: h,
            activation: Activation::Relu,
            projector_activation: Activation::Relu,
            heads: 2,
            attention_slope: 0.2,
            bias: true,
        }
    }

    #[test]
    fn normalized_single_node_and_pair() {
        let one = Adjacency::from_edges(1, &[]);
        assert_eq!(normalize_adjacency(&one).csr().to_dense(), Matrix::from_rows(&[[1.0]]));
        let two = Adjacency::from_edges(2, &[(0, 1)]);
        let dense = normalize_adjacency(&two).csr().to_dense();
        assert!(dense.max_abs_diff(&Matrix::filled(2, 2, 0.5)) < 1e-15);
    }

    #[test]
    fn normalized_is_symmetric_with_self_loops() {
        let adj = Adjacency::from_edges(5, &[(0, 1), (1, 2), (2, 3), (0, 3), (3, 4)]);
        let a = normalize_adjacency(&adj);
        assert!(a.csr().is_symmetric());
        for i in 0..5 {
            assert!(a.csr().get(i, i) > 0.0);
        }
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let bound = (6.0f64 / 8.0).sqrt();
        let a = init_parameters(4, 4, &mut rng::stream(3, &[]));
        let b = init_parameters(4, 4, &mut rng::stream(3, &[]));
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|v| v.abs() <= bound));
        assert!((bound - 0.8660254).abs() < 1e-6);
    }

    #[test]
    fn gcn_identity_composition() {
        let n = 4;
        let mut model = Model::init(spec(EncoderKind::Gcn, n, n), &mut rng::stream(0, &[])).unwrap();
        model.params_mut()[0] = Matrix::identity(n);
        model.params_mut()[1] = Matrix::identity(n);
        let x = Matrix::from_rows(&[[1.0, 0.0, 2.0, 0.5], [0.0, 3.0, 1.0, 0.0], [0.2, 0.0, 0.0, 1.0], [4.0, 1.0, 0.0, 0.0]]);
        let op = GraphOperator::for_encoder(EncoderKind::Gcn, &Adjacency::from_edges(n, &[]));
        assert_eq!(model.embed(&op, &x).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut model = Model::init(spec(EncoderKind::Gcn, 3, 2), &mut rng::stream(0, &[])).unwrap();
        for p in model.params_mut() {
            *p = Matrix::zeros(p.rows(), p.cols());
        }
        let x = Matrix::filled(3, 3, 1.0);
        let op = GraphOperator::for_encoder(EncoderKind::Gcn, &Adjacency::from_edges(3, &[(0, 1)]));
        assert!(model.embed(&op, &x).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert!(model.embed_projected(&op, &x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gat_single_node_attends_to_itself() {
        let model = Model::init(spec(EncoderKind::Gat, 3, 2), &mut rng::stream(1, &[])).unwrap();
        let x = Matrix::from_rows(&[[0.5, -1.0, 2.0]]);
        let op = GraphOperator::for_encoder(EncoderKind::Gat, &Adjacency::from_edges(1, &[]));
        let h = model.embed(&op, &x).unwrap();
        // Singleton softmax: each layer reduces to an affine map.
        let p = model.params();
        let l1 = x.matmul(&p[0]).unwrap().zip_map(&p[3], |a, b| (a + b).max(0.0));
        let expect = l1.matmul(&p[4]).unwrap().zip_map(&p[7], |a, b| a + b);
        assert!(h.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn gat_zero_attention_is_mean_aggregation() {
        let mut s = spec(EncoderKind::Gat, 2, 2);
        s.heads = 1;
        s.bias = false;
        let mut model = Model::init(s, &mut rng::stream(2, &[])).unwrap();
        for k in [1, 2, 5, 6] {
            model.params_mut()[k] = Matrix::zeros(2, 1);
        }
        model.params_mut()[0] = Matrix::identity(2);
        model.params_mut()[4] = Matrix::identity(2);
        let adj = Adjacency::from_edges(3, &[(0, 1), (1, 2)]);
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 0.0], [0.0, 6.0]]);
        let op = GraphOperator::for_encoder(EncoderKind::Gat, &adj);
        let h = model.embed(&op, &x).unwrap();
        // mean over N(i) ∪ {i}, twice (nonnegative input so relu is inert)
        let mean = |m: &Matrix| {
            Matrix::from_rows(&[
                [(m[(0, 0)] + m[(1, 0)]) / 2.0, (m[(0, 1)] + m[(1, 1)]) / 2.0],
                [(m[(0, 0)] + m[(1, 0)] + m[(2, 0)]) / 3.0, (m[(0, 1)] + m[(1, 1)] + m[(2, 1)]) / 3.0],
                [(m[(1, 0)] + m[(2, 0)]) / 2.0, (m[(1, 1)] + m[(2, 1)]) / 2.0],
            ])
        };
        assert!(h.max_abs_diff(&mean(&mean(&x))) < 1e-12);
    }

    #[test]
    fn projector_identity_and_zero() {
        let mut model = Model::init(spec(EncoderKind::Gcn, 2, 3), &mut rng::stream(0, &[])).unwrap();
        let base = 2;
        model.params_mut()[base] = Matrix::identity(3);
        model.params_mut()[base + 2] = Matrix::identity(3);
        let hv = Matrix::from_rows(&[[1.0, 0.0, 2.0], [0.5, 0.25, 0.0]]);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false).unwrap();
        let h = tape.constant(hv.clone()).unwrap();
        let z = bound.project(&mut tape, h).unwrap();
        assert_eq!(tape.value(z), &hv);
        let zero = tape.constant(Matrix::zeros(2, 3)).unwrap();
        let z0 = bound.project(&mut tape, zero).unwrap();
        assert!(tape.value(z0).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_layout_flags() {
        let mut s = spec(EncoderKind::Gat, 5, 4);
        s.activation = Activation::Prelu;
        s.projector_activation = Activation::Prelu;
        let model = Model::init(s, &mut rng::stream(0, &[])).unwrap();
        let shapes = s.param_shapes();
        assert_eq!(shapes.len(), 8 + 1 + 4 + 1);
        assert_eq!(model.params()[8], Matrix::filled(1, 8, PRELU_INIT));
        assert_eq!(model.params()[13], Matrix::filled(1, 4, PRELU_INIT));
        assert_eq!(model.params()[10], Matrix::zeros(1, 4));
        assert!(Model::from_parts(s, model.params()[..3].to_vec()).is_err());
    }

    #[test]
    fn operator_mismatch_is_rejected() {
        let model = Model::init(spec(EncoderKind::Gcn, 2, 2), &mut rng::stream(0, &[])).unwrap();
        let adj = Adjacency::from_edges(2, &[(0, 1)]);
        let op = GraphOperator::for_encoder(EncoderKind::Gat, &adj);
        assert!(model.embed(&op, &Matrix::filled(2, 2, 1.0)).is_err());
        let op = GraphOperator::for_encoder(EncoderKind::Gcn, &adj);
        assert!(model.embed(&op, &Matrix::filled(3, 2, 1.0)).is_err());
    }
}
