//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every primitive evaluates eagerly, appends a node to the tape and returns
//! a [`Var`] handle. [`Tape::backward`] walks the nodes in reverse append
//! order, which is a valid reverse topological order because a node can
//! only reference nodes appended before it.
//!
//! Sparse operands (adjacency matrices) are constants; only dense operands
//! carry gradients. Binary elementwise ops broadcast a `(1,1)`, `(r,1)` or
//! `(1,c)` operand against a full matrix.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::matrix::{Csr, Matrix};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Exp,
    Log,
    Relu,
    LeakyRelu(f64),
    Elu(f64),
    SafeRecip,
    Scale(f64),
    AddScalar(f64),
    ClampMin(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Extremum {
    Max,
    Min,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(Unary, usize),
    Binary(Binary, usize, usize),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    SpMM(Arc<Csr>, usize),
    Prelu(usize, usize),
    RowL2Normalize(usize),
    RowSum(usize),
    SumAll(usize),
    MeanAll(usize),
    /// Flat index of the selected element.
    ExtremumAll(usize, usize),
    /// Column index of the selected element per row.
    ExtremumRows(usize, Vec<usize>),
    Transpose(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    EdgeScores(Arc<Csr>, usize, usize),
    SegmentSoftmax(Arc<Csr>, usize),
    EdgeAggregate(Arc<Csr>, usize, usize),
}

struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn bcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

/// Sum `g` down to `shape` (undoing a broadcast).
fn reduce_to(g: &Matrix, shape: (usize, usize)) -> Matrix {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for r in 0..g.rows() {
        let rr = if shape.0 == 1 { 0 } else { r };
        for c in 0..g.cols() {
            let cc = if shape.1 == 1 { 0 } else { c };
            out[(rr, cc)] += g[(r, c)];
        }
    }
    out
}

#[inline]
fn bget(m: &Matrix, r: usize, c: usize) -> f64 {
    let rr = if m.rows() == 1 { 0 } else { r };
    let cc = if m.cols() == 1 { 0 } else { c };
    m[(rr, cc)]
}

fn binary_apply(a: &Matrix, b: &Matrix, shape: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.shape() == shape && b.shape() == shape {
        return a.zip_map(b, f);
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for r in 0..shape.0 {
        for c in 0..shape.1 {
            out[(r, c)] = f(bget(a, r, c), bget(b, r, c));
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "Var used with a different tape");
        v.index
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[self.idx(v)]
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.node(v).value.shape()
    }

    /// Gradient of the last backward output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.node(v).grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!("non-finite value produced by {name}")));
        }
        if self.backward_done {
            return Err(Error::Autodiff("tape already differentiated".into()));
        }
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn rg(&self, parents: &[usize]) -> bool {
        parents.iter().any(|&p| self.nodes[p].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    fn unary(&mut self, kind: Unary, x: Var, name: &'static str) -> Result<Var> {
        let xi = self.idx(x);
        let xv = &self.nodes[xi].value;
        let value = match kind {
            Unary::Exp => xv.map(f64::exp),
            Unary::Log => {
                if let Some(bad) = xv.as_slice().iter().find(|&&v| v <= 0.0) {
                    return Err(Error::Numeric(format!("log of nonpositive value {bad}")));
                }
                xv.map(f64::ln)
            }
            Unary::Relu => xv.map(|v| v.max(0.0)),
            Unary::LeakyRelu(s) => xv.map(|v| if v > 0.0 { v } else { s * v }),
            Unary::Elu(a) => xv.map(|v| if v > 0.0 { v } else { a * v.exp_m1() }),
            Unary::SafeRecip => xv.map(|v| if v == 0.0 { 0.0 } else { 1.0 / v }),
            Unary::Scale(c) => xv.scale(c),
            Unary::AddScalar(c) => xv.map(|v| v + c),
            Unary::ClampMin(c) => xv.map(|v| v.max(c)),
        };
        let rg = self.rg(&[xi]);
        self.push(value, Op::Unary(kind, xi), rg, name)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x, "exp")
    }

    /// Natural log; errors on any nonpositive entry.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x, "log")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x, "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(Unary::LeakyRelu(slope), x, "leaky_relu")
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        self.unary(Unary::Elu(alpha), x, "elu")
    }

    /// `1/x` elementwise with `1/0 := 0` (and zero gradient there).
    pub fn safe_recip(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::SafeRecip, x, "safe_recip")
    }

    pub fn scalar_mul(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(Unary::Scale(c), x, "scalar_mul")
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(Unary::AddScalar(c), x, "add_scalar")
    }

    /// `max(x, c)` elementwise.
    pub fn clamp_min(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(Unary::ClampMin(c), x, "clamp_min")
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let shape = match (
            bcast_dim(av.rows(), bv.rows()),
            bcast_dim(av.cols(), bv.cols()),
        ) {
            (Some(r), Some(c)) => (r, c),
            _ => {
                return Err(Error::shape(
                    name,
                    format!("{:?} vs {:?}", av.shape(), bv.shape()),
                ))
            }
        };
        let value = match kind {
            Binary::Add => binary_apply(av, bv, shape, |x, y| x + y),
            Binary::Sub => binary_apply(av, bv, shape, |x, y| x - y),
            Binary::Mul => binary_apply(av, bv, shape, |x, y| x * y),
        };
        let rg = self.rg(&[ai, bi]);
        self.push(value, Op::Binary(kind, ai, bi), rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b, "sub")
    }

    /// Hadamard product (with broadcasting).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b, "mul")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let value = self.nodes[ai].value.matmul(&self.nodes[bi].value)?;
        let rg = self.rg(&[ai, bi]);
        self.push(value, Op::MatMul(ai, bi), rg, "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let value = self.nodes[ai].value.matmul_t(&self.nodes[bi].value)?;
        let rg = self.rg(&[ai, bi]);
        self.push(value, Op::MatMulT(ai, bi), rg, "matmul_t")
    }

    /// Constant sparse matrix times a dense operand.
    pub fn sparse_dense_matmul(&mut self, s: &Arc<Csr>, b: Var) -> Result<Var> {
        let bi = self.idx(b);
        let value = s.matmul_dense(&self.nodes[bi].value)?;
        let rg = self.rg(&[bi]);
        self.push(value, Op::SpMM(Arc::clone(s), bi), rg, "sparse_dense_matmul")
    }

    /// Parametric ReLU; `slope` is `(1,1)` or `(1, cols)`.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let (xi, si) = (self.idx(x), self.idx(slope));
        let (xv, sv) = (&self.nodes[xi].value, &self.nodes[si].value);
        if sv.rows() != 1 || !(sv.cols() == 1 || sv.cols() == xv.cols()) {
            return Err(Error::shape("prelu", format!("slope {:?} for {:?}", sv.shape(), xv.shape())));
        }
        let value = binary_apply(xv, sv, xv.shape(), |v, a| if v > 0.0 { v } else { a * v });
        let rg = self.rg(&[xi, si]);
        self.push(value, Op::Prelu(xi, si), rg, "prelu")
    }

    fn normalize_rows(&mut self, x: Var, strict: bool) -> Result<Var> {
        let xi = self.idx(x);
        let xv = &self.nodes[xi].value;
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                if strict {
                    return Err(Error::Numeric(format!(
                        "degenerate embedding: zero row {r} in row_l2_normalize"
                    )));
                }
                continue;
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let rg = self.rg(&[xi]);
        self.push(value, Op::RowL2Normalize(xi), rg, "row_l2_normalize")
    }

    /// Divide each row by its L2 norm; a zero row is an error.
    pub fn row_l2_normalize(&mut self, x: Var) -> Result<Var> {
        self.normalize_rows(x, true)
    }

    /// As [`Tape::row_l2_normalize`] but a zero row stays zero with zero gradient.
    pub fn row_l2_normalize_lenient(&mut self, x: Var) -> Result<Var> {
        self.normalize_rows(x, false)
    }

    /// `(r, c) -> (r, 1)`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x);
        let xv = &self.nodes[xi].value;
        let sums: Vec<f64> = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let rg = self.rg(&[xi]);
        self.push(Matrix::column(&sums), Op::RowSum(xi), rg, "row_sum")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x);
        let s = self.nodes[xi].value.sum();
        let rg = self.rg(&[xi]);
        self.push(Matrix::scalar(s), Op::SumAll(xi), rg, "sum_all")
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x);
        let xv = &self.nodes[xi].value;
        if xv.is_empty() {
            return Err(Error::shape("mean_all", "empty operand"));
        }
        let m = xv.sum() / xv.len() as f64;
        let rg = self.rg(&[xi]);
        self.push(Matrix::scalar(m), Op::MeanAll(xi), rg, "mean_all")
    }

    fn extremum_all(&mut self, x: Var, which: Extremum, name: &'static str) -> Result<Var> {
        let xi = self.idx(x);
        let xv = self.nodes[xi].value.as_slice();
        if xv.is_empty() {
            return Err(Error::shape(name, "empty operand"));
        }
        let mut best = 0;
        for (k, &v) in xv.iter().enumerate() {
            let better = match which {
                Extremum::Max => v > xv[best],
                Extremum::Min => v < xv[best],
            };
            if better {
                best = k;
            }
        }
        let value = Matrix::scalar(xv[best]);
        let rg = self.rg(&[xi]);
        self.push(value, Op::ExtremumAll(xi, best), rg, name)
    }

    /// Global maximum; the gradient goes to the first maximal entry.
    pub fn max_all(&mut self, x: Var) -> Result<Var> {
        self.extremum_all(x, Extremum::Max, "max_all")
    }

    /// Global minimum; the gradient goes to the first minimal entry.
    pub fn min_all(&mut self, x: Var) -> Result<Var> {
        self.extremum_all(x, Extremum::Min, "min_all")
    }

    fn extremum_rows(&mut self, x: Var, which: Extremum, name: &'static str) -> Result<Var> {
        let xi = self.idx(x);
        let xv = &self.nodes[xi].value;
        if xv.cols() == 0 {
            return Err(Error::shape(name, "zero columns"));
        }
        let mut picks = Vec::with_capacity(xv.rows());
        let mut vals = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                let better = match which {
                    Extremum::Max => v > row[best],
                    Extremum::Min => v < row[best],
                };
                if better {
                    best = c;
                }
            }
            picks.push(best);
            vals.push(row[best]);
        }
        let rg = self.rg(&[xi]);
        self.push(Matrix::column(&vals), Op::ExtremumRows(xi, picks), rg, name)
    }

    /// Per-row maximum, `(r, c) -> (r, 1)`.
    pub fn row_max(&mut self, x: Var) -> Result<Var> {
        self.extremum_rows(x, Extremum::Max, "row_max")
    }

    /// Per-row minimum, `(r, c) -> (r, 1)`.
    pub fn row_min(&mut self, x: Var) -> Result<Var> {
        self.extremum_rows(x, Extremum::Min, "row_min")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x);
        let value = self.nodes[xi].value.transpose();
        let rg = self.rg(&[xi]);
        self.push(value, Op::Transpose(xi), rg, "transpose")
    }

    /// Stack operands vertically; all must share a column count.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let ids: Vec<usize> = xs.iter().map(|&v| self.idx(v)).collect();
        let cols = ids.first().map_or(0, |&i| self.nodes[i].value.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &ids {
            let v = &self.nodes[i].value;
            if v.cols() != cols {
                return Err(Error::shape("concat_rows", format!("{} vs {} columns", v.cols(), cols)));
            }
            rows += v.rows();
            data.extend_from_slice(v.as_slice());
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        let rg = self.rg(&ids);
        self.push(value, Op::ConcatRows(ids), rg, "concat_rows")
    }

    /// Place operands side by side; all must share a row count.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let ids: Vec<usize> = xs.iter().map(|&v| self.idx(v)).collect();
        let rows = ids.first().map_or(0, |&i| self.nodes[i].value.rows());
        let mut cols = 0;
        for &i in &ids {
            let v = &self.nodes[i].value;
            if v.rows() != rows {
                return Err(Error::shape("concat_cols", format!("{} vs {} rows", v.rows(), rows)));
            }
            cols += v.cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &i in &ids {
                let src = self.nodes[i].value.row(r);
                value.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = self.rg(&ids);
        self.push(value, Op::ConcatCols(ids), rg, "concat_cols")
    }

    /// Columns `start..start+len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xi = self.idx(x);
        let xv = &self.nodes[xi].value;
        if start + len > xv.cols() {
            return Err(Error::shape("slice_cols", format!("{start}+{len} of {} columns", xv.cols())));
        }
        let mut value = Matrix::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            value.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let rg = self.rg(&[xi]);
        self.push(value, Op::SliceCols(xi, start), rg, "slice_cols")
    }

    /// Per stored entry `(i, j)` of `pattern` (CSR order): `src[i] + dst[j]`.
    /// `src` and `dst` are `(n, 1)`; the result is `(nnz, 1)`.
    pub fn edge_scores(&mut self, pattern: &Arc<Csr>, src: Var, dst: Var) -> Result<Var> {
        let (si, di) = (self.idx(src), self.idx(dst));
        let (sv, dv) = (&self.nodes[si].value, &self.nodes[di].value);
        let n = pattern.rows();
        if sv.shape() != (n, 1) || dv.shape() != (n, 1) {
            return Err(Error::shape("edge_scores", format!("{:?}/{:?} for n={n}", sv.shape(), dv.shape())));
        }
        let mut out = Vec::with_capacity(pattern.nnz());
        for i in 0..n {
            for &j in pattern.row(i).0 {
                out.push(sv[(i, 0)] + dv[(j, 0)]);
            }
        }
        let rg = self.rg(&[si, di]);
        self.push(Matrix::column(&out), Op::EdgeScores(Arc::clone(pattern), si, di), rg, "edge_scores")
    }

    /// Softmax of an `(nnz, 1)` edge vector within each row of `pattern`.
    pub fn segment_softmax(&mut self, pattern: &Arc<Csr>, logits: Var) -> Result<Var> {
        let li = self.idx(logits);
        let lv = &self.nodes[li].value;
        if lv.shape() != (pattern.nnz(), 1) {
            return Err(Error::shape("segment_softmax", format!("{:?} for nnz={}", lv.shape(), pattern.nnz())));
        }
        let x = lv.as_slice();
        let mut out = vec![0.0; x.len()];
        let ptr = pattern.indptr();
        for i in 0..pattern.rows() {
            let seg = ptr[i]..ptr[i + 1];
            if seg.is_empty() {
                continue;
            }
            let m = x[seg.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in seg.clone() {
                out[k] = (x[k] - m).exp();
                z += out[k];
            }
            for k in seg {
                out[k] /= z;
            }
        }
        let rg = self.rg(&[li]);
        self.push(Matrix::column(&out), Op::SegmentSoftmax(Arc::clone(pattern), li), rg, "segment_softmax")
    }

    /// `out[i] = Σ_{(i,j) in pattern} weight[e] * h[j]`.
    pub fn edge_aggregate(&mut self, pattern: &Arc<Csr>, weights: Var, h: Var) -> Result<Var> {
        let (wi, hi) = (self.idx(weights), self.idx(h));
        let (wv, hv) = (&self.nodes[wi].value, &self.nodes[hi].value);
        if wv.shape() != (pattern.nnz(), 1) || hv.rows() != pattern.cols() {
            return Err(Error::shape("edge_aggregate", format!("w {:?}, h {:?}", wv.shape(), hv.shape())));
        }
        let mut out = Matrix::zeros(pattern.rows(), hv.cols());
        let ptr = pattern.indptr();
        for i in 0..pattern.rows() {
            for k in ptr[i]..ptr[i + 1] {
                let w = wv[(k, 0)];
                let j = pattern.indices()[k];
                for (o, &v) in out.row_mut(i).iter_mut().zip(hv.row(j)) {
                    *o += w * v;
                }
            }
        }
        let rg = self.rg(&[wi, hi]);
        self.push(out, Op::EdgeAggregate(Arc::clone(pattern), wi, hi), rg, "edge_aggregate")
    }

    fn accumulate(&mut self, index: usize, g: Matrix) {
        let node = &mut self.nodes[index];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Populate gradients of the `(1,1)` `output` for every reachable node
    /// that requires them. A tape can be differentiated once.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let oi = self.idx(output);
        if self.backward_done {
            return Err(Error::Autodiff("backward called twice on one tape".into()));
        }
        if self.nodes[oi].value.shape() != (1, 1) {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar output, got {:?}",
                self.nodes[oi].value.shape()
            )));
        }
        self.backward_done = true;
        self.nodes[oi].grad = Some(Matrix::scalar(1.0));
        for i in (0..=oi).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.clone() else {
                continue;
            };
            if !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at node {i}")));
            }
            let op = self.nodes[i].op.clone();
            self.backprop(i, &op, &g)?;
        }
        Ok(())
    }

    fn backprop(&mut self, i: usize, op: &Op, g: &Matrix) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Unary(kind, x) => {
                let xv = &self.nodes[x].value;
                let yv = &self.nodes[i].value;
                let dx = match kind {
                    Unary::Exp => g.zip_map(yv, |g, y| g * y),
                    Unary::Log => g.zip_map(xv, |g, x| g / x),
                    Unary::Relu => g.zip_map(xv, |g, x| if x > 0.0 { g } else { 0.0 }),
                    Unary::LeakyRelu(s) => g.zip_map(xv, |g, x| if x > 0.0 { g } else { s * g }),
                    Unary::Elu(a) => {
                        let d = xv.zip_map(yv, |x, y| if x > 0.0 { 1.0 } else { y + a });
                        g.zip_map(&d, |g, d| g * d)
                    }
                    Unary::SafeRecip => g.zip_map(yv, |g, y| -g * y * y),
                    Unary::Scale(c) => g.scale(c),
                    Unary::AddScalar(_) => g.clone(),
                    Unary::ClampMin(c) => g.zip_map(xv, |g, x| if x > c { g } else { 0.0 }),
                };
                self.accumulate(x, dx);
            }
            Op::Binary(kind, a, b) => {
                let ashape = self.nodes[a].value.shape();
                let bshape = self.nodes[b].value.shape();
                let (da, db) = match kind {
                    Binary::Add => (g.clone(), g.clone()),
                    Binary::Sub => (g.clone(), g.scale(-1.0)),
                    Binary::Mul => {
                        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                        let da = binary_apply(g, bv, g.shape(), |g, b| g * b);
                        let db = binary_apply(g, av, g.shape(), |g, a| g * a);
                        (da, db)
                    }
                };
                let (da, db) = (reduce_to(&da, ashape), reduce_to(&db, bshape));
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::MatMul(a, b) => {
                let da = g.matmul_t(&self.nodes[b].value)?;
                let db = self.nodes[a].value.t_matmul(g)?;
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::MatMulT(a, b) => {
                let da = g.matmul(&self.nodes[b].value)?;
                let db = g.t_matmul(&self.nodes[a].value)?;
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::SpMM(ref s, b) => {
                if self.nodes[b].requires_grad {
                    let db = s.t_matmul_dense(g)?;
                    self.accumulate(b, db);
                }
            }
            Op::Prelu(x, s) => {
                let (xv, sv) = (&self.nodes[x].value, &self.nodes[s].value);
                let dx = {
                    let mut d = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        for c in 0..xv.cols() {
                            let x = xv[(r, c)];
                            d[(r, c)] = if x > 0.0 { g[(r, c)] } else { bget(sv, 0, c) * g[(r, c)] };
                        }
                    }
                    d
                };
                let ds = {
                    let raw = g.zip_map(xv, |g, x| if x > 0.0 { 0.0 } else { g * x });
                    reduce_to(&raw, sv.shape())
                };
                self.accumulate(x, dx);
                self.accumulate(s, ds);
            }
            Op::RowL2Normalize(x) => {
                let xv = &self.nodes[x].value;
                let yv = &self.nodes[i].value;
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let norm = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let (y, gr) = (yv.row(r), g.row(r));
                    let yg: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = (gr[c] - y[c] * yg) / norm;
                    }
                }
                self.accumulate(x, dx);
            }
            Op::RowSum(x) => {
                let shape = self.nodes[x].value.shape();
                let mut dx = Matrix::zeros(shape.0, shape.1);
                for r in 0..shape.0 {
                    dx.row_mut(r).fill(g[(r, 0)]);
                }
                self.accumulate(x, dx);
            }
            Op::SumAll(x) => {
                let (r, c) = self.nodes[x].value.shape();
                self.accumulate(x, Matrix::filled(r, c, g.item()));
            }
            Op::MeanAll(x) => {
                let (r, c) = self.nodes[x].value.shape();
                self.accumulate(x, Matrix::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::ExtremumAll(x, k) => {
                let (r, c) = self.nodes[x].value.shape();
                let mut dx = Matrix::zeros(r, c);
                dx.as_mut_slice()[k] = g.item();
                self.accumulate(x, dx);
            }
            Op::ExtremumRows(x, ref picks) => {
                let (r, c) = self.nodes[x].value.shape();
                let mut dx = Matrix::zeros(r, c);
                for (row, &col) in picks.iter().enumerate() {
                    dx[(row, col)] = g[(row, 0)];
                }
                self.accumulate(x, dx);
            }
            Op::Transpose(x) => self.accumulate(x, g.transpose()),
            Op::ConcatRows(ref ids) => {
                let mut off = 0;
                for &p in ids {
                    let (r, c) = self.nodes[p].value.shape();
                    let part = Matrix::from_vec(r, c, g.as_slice()[off * c..(off + r) * c].to_vec())?;
                    off += r;
                    self.accumulate(p, part);
                }
            }
            Op::ConcatCols(ref ids) => {
                let mut off = 0;
                for &p in ids {
                    let (r, c) = self.nodes[p].value.shape();
                    let mut part = Matrix::zeros(r, c);
                    for row in 0..r {
                        part.row_mut(row).copy_from_slice(&g.row(row)[off..off + c]);
                    }
                    off += c;
                    self.accumulate(p, part);
                }
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.nodes[x].value.shape();
                let mut dx = Matrix::zeros(r, c);
                for row in 0..r {
                    dx.row_mut(row)[start..start + g.cols()].copy_from_slice(g.row(row));
                }
                self.accumulate(x, dx);
            }
            Op::EdgeScores(ref p, s, d) => {
                let n = p.rows();
                let mut ds = Matrix::zeros(n, 1);
                let mut dd = Matrix::zeros(n, 1);
                let ptr = p.indptr();
                for row in 0..n {
                    for k in ptr[row]..ptr[row + 1] {
                        ds[(row, 0)] += g[(k, 0)];
                        dd[(p.indices()[k], 0)] += g[(k, 0)];
                    }
                }
                self.accumulate(s, ds);
                self.accumulate(d, dd);
            }
            Op::SegmentSoftmax(ref p, l) => {
                let y = self.nodes[i].value.as_slice();
                let mut dx = vec![0.0; y.len()];
                let ptr = p.indptr();
                for row in 0..p.rows() {
                    let seg = ptr[row]..ptr[row + 1];
                    let dotp: f64 = seg.clone().map(|k| y[k] * g[(k, 0)]).sum();
                    for k in seg {
                        dx[k] = y[k] * (g[(k, 0)] - dotp);
                    }
                }
                self.accumulate(l, Matrix::column(&dx));
            }
            Op::EdgeAggregate(ref p, w, h) => {
                let (wv, hv) = (&self.nodes[w].value, &self.nodes[h].value);
                let mut dw = Matrix::zeros(wv.rows(), 1);
                let mut dh = Matrix::zeros(hv.rows(), hv.cols());
                let ptr = p.indptr();
                for row in 0..p.rows() {
                    let gr = g.row(row);
                    for k in ptr[row]..ptr[row + 1] {
                        let j = p.indices()[k];
                        dw[(k, 0)] = gr.iter().zip(hv.row(j)).map(|(a, b)| a * b).sum();
                        let wk = wv[(k, 0)];
                        for (d, &gv) in dh.row_mut(j).iter_mut().zip(gr) {
                            *d += wk * gv;
                        }
                    }
                }
                self.accumulate(w, dw);
                self.accumulate(h, dh);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_zero() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 3)).unwrap();
        let y = t.exp(x).unwrap();
        assert_eq!(t.value(y), &Matrix::filled(2, 3, 1.0));
        let s = t.sum_all(y).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn normalize_three_four_five() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_rows(&[[3.0, 4.0]])).unwrap();
        let y = t.row_l2_normalize(x).unwrap();
        assert!(t.value(y).max_abs_diff(&Matrix::from_rows(&[[0.6, 0.8]])) < 1e-15);
    }

    #[test]
    fn normalize_zero_row_modes() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]])).unwrap();
        assert!(matches!(t.row_l2_normalize(x), Err(Error::Numeric(_))));
        let y = t.row_l2_normalize_lenient(x).unwrap();
        assert_eq!(t.value(y).row(0), &[0.0, 0.0]);
        let s = t.sum_all(y).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().row(0), &[0.0, 0.0]);
    }

    #[test]
    fn linear_and_quadratic_grads() {
        let w0 = Matrix::from_rows(&[[1.0, -2.0, 0.5], [3.0, 0.0, 1.0], [-1.0, 2.0, 4.0]]);
        let mut t = Tape::new();
        let w = t.param(w0.clone()).unwrap();
        let s = t.sum_all(w).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap(), &Matrix::filled(3, 3, 1.0));

        let mut t = Tape::new();
        let w = t.param(w0.clone()).unwrap();
        let sq = t.mul(w, w).unwrap();
        let s = t.sum_all(sq).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap(), &w0.scale(2.0));
    }

    #[test]
    fn backward_contract_errors() {
        let mut t = Tape::new();
        let w = t.param(Matrix::filled(2, 2, 1.0)).unwrap();
        assert!(matches!(t.backward(w), Err(Error::Autodiff(_))));
        let s = t.sum_all(w).unwrap();
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(Error::Autodiff(_))));
    }

    #[test]
    fn log_rejects_nonpositive_and_shapes_checked() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_rows(&[[1.0, 0.0]])).unwrap();
        assert!(matches!(t.log(x), Err(Error::Numeric(_))));
        let a = t.param(Matrix::zeros(2, 3)).unwrap();
        let b = t.param(Matrix::zeros(2, 2)).unwrap();
        assert!(matches!(t.matmul(a, a), Err(Error::Shape { .. })));
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut t = Tape::new();
        let x = t.param(Matrix::scalar(1000.0)).unwrap();
        assert!(matches!(t.exp(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut t = Tape::new();
        let a = t.param(Matrix::zeros(3, 2)).unwrap();
        let b = t.param(Matrix::from_rows(&[[1.0, 2.0]])).unwrap();
        let c = t.param(Matrix::scalar(0.5)).unwrap();
        let ab = t.add(a, b).unwrap();
        let abc = t.mul(ab, c).unwrap();
        let s = t.sum_all(abc).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(b).unwrap(), &Matrix::from_rows(&[[1.5, 1.5]]));
        assert_eq!(t.grad(c).unwrap().item(), 9.0);
    }

    #[test]
    fn constants_get_no_grad() {
        let mut t = Tape::new();
        let x = t.param(Matrix::filled(1, 2, 2.0)).unwrap();
        let k = t.constant(Matrix::filled(1, 2, 3.0)).unwrap();
        let y = t.mul(x, k).unwrap();
        let s = t.sum_all(y).unwrap();
        t.backward(s).unwrap();
        assert!(t.grad(k).is_none());
        assert_eq!(t.grad(x).unwrap().as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn segment_softmax_sums_to_one_per_row() {
        let p = Arc::new(
            Csr::from_triplets(3, 3, vec![(0, 0, 1.0), (0, 2, 1.0), (1, 1, 1.0), (2, 0, 1.0), (2, 1, 1.0), (2, 2, 1.0)])
                .unwrap(),
        );
        let mut t = Tape::new();
        let l = t.param(Matrix::column(&[0.3, -1.0, 2.0, 0.0, 0.5, 1.0])).unwrap();
        let a = t.segment_softmax(&p, l).unwrap();
        let v = t.value(a).as_slice().to_vec();
        assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
        assert_eq!(v[2], 1.0);
        assert!((v[3] + v[4] + v[5] - 1.0).abs() < 1e-15);
    }
}
