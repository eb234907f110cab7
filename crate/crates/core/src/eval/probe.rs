//! Multinomial logistic-regression probe trained by full-batch gradient
//! descent with backtracking line search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-4,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

/// Fitted probe. Inputs are standardized per column with the training
/// mean and deviation before the affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub config: ProbeConfig,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Objective value after each accepted step, starting at the zero init.
    pub history: Vec<f64>,
}

/// Mean cross-entropy plus `l2/2 ‖W‖²` and its gradient `(∂W, ∂b)`.
pub fn probe_objective(x: &Matrix, labels: &[usize], w: &Matrix, b: &[f64], l2: f64) -> Result<(f64, Matrix, Vec<f64>)> {
    let n = x.rows();
    let c = w.cols();
    let mut logits = x.matmul(w)?;
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row_mut(i);
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
        let mx = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        loss += z.ln() + mx - row[y];
        for v in row.iter_mut() {
            *v = (*v - mx).exp() / z;
        }
        row[y] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    loss = loss * inv_n + 0.5 * l2 * w.as_slice().iter().map(|v| v * v).sum::<f64>();
    let mut gw = x.t_matmul(&logits)?.scale(inv_n);
    gw.add_assign(&w.scale(l2));
    let mut gb = vec![0.0; c];
    for i in 0..n {
        for (g, v) in gb.iter_mut().zip(logits.row(i)) {
            *g += v * inv_n;
        }
    }
    Ok((loss, gw, gb))
}

fn grad_norm_sq(gw: &Matrix, gb: &[f64]) -> f64 {
    gw.as_slice().iter().chain(gb).map(|v| v * v).sum()
}

impl LogisticProbe {
    pub fn fit(embeddings: &Matrix, labels: &[usize], num_classes: usize, config: ProbeConfig) -> Result<Self> {
        let (n, p) = embeddings.shape();
        if labels.len() != n {
            return Err(Error::shape("probe", format!("{n} rows, {} labels", labels.len())));
        }
        if n == 0 {
            return Err(Error::Data("probe needs at least one sample".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Data(format!("label {bad} out of range for {num_classes} classes")));
        }
        if labels.iter().all(|&y| y == labels[0]) {
            return Err(Error::Data("probe needs at least two classes".into()));
        }
        let mut mean = vec![0.0; p];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(embeddings.row(i)) {
                *m += v / n as f64;
            }
        }
        let mut scale = vec![0.0; p];
        for i in 0..n {
            for ((s, v), m) in scale.iter_mut().zip(embeddings.row(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        for s in scale.iter_mut() {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let x = standardize(embeddings, &mean, &scale);
        let mut w = Matrix::zeros(p, num_classes);
        let mut b = vec![0.0; num_classes];
        let (mut f, mut gw, mut gb) = probe_objective(&x, labels, &w, &b, config.l2)?;
        let mut history = vec![f];
        let mut step = 1.0;
        for iter in 0..config.max_iter {
            let g2 = grad_norm_sq(&gw, &gb);
            if g2.sqrt() < config.tol {
                break;
            }
            let mut accepted = None;
            while step > 1e-20 {
                let w_new = w.zip_map(&gw, |a, g| a - step * g);
                let b_new: Vec<f64> = b.iter().zip(&gb).map(|(a, g)| a - step * g).collect();
                let (f_new, gw_new, gb_new) = probe_objective(&x, labels, &w_new, &b_new, config.l2)?;
                if !f_new.is_finite() {
                    return Err(Error::Numeric(format!("probe diverged at iteration {iter}")));
                }
                if f_new <= f - 0.5 * step * g2 {
                    accepted = Some((w_new, b_new, f_new, gw_new, gb_new));
                    break;
                }
                step *= 0.5;
            }
            let Some((w_new, b_new, f_new, gw_new, gb_new)) = accepted else {
                break;
            };
            w = w_new;
            b = b_new;
            f = f_new;
            gw = gw_new;
            gb = gb_new;
            history.push(f);
            step *= 2.0;
        }
        if !w.all_finite() {
            return Err(Error::Numeric("probe produced non-finite weights".into()));
        }
        Ok(LogisticProbe {
            weights: w,
            bias: b,
            config,
            mean,
            scale,
            history,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn decision_function(&self, embeddings: &Matrix) -> Result<Matrix> {
        if embeddings.cols() != self.mean.len() {
            return Err(Error::shape(
                "probe",
                format!("{} columns, fitted on {}", embeddings.cols(), self.mean.len()),
            ));
        }
        let mut out = standardize(embeddings, &self.mean, &self.scale).matmul(&self.weights)?;
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Argmax class per row, ties to the lower class id.
    pub fn predict(&self, embeddings: &Matrix) -> Result<Vec<usize>> {
        let scores = self.decision_function(embeddings)?;
        Ok((0..scores.rows())
            .map(|i| {
                let row = scores.row(i);
                (1..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }
}

fn standardize(x: &Matrix, mean: &[f64], scale: &[f64]) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        for ((v, m), s) in out.row_mut(i).iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
    out
}
