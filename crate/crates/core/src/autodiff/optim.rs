//! First-order optimizers with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Per-parameter Adam moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr} must be > 0")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay {weight_decay} must be >= 0")));
        }
        Ok(OptimizerState {
            kind,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn adam(lr: f64, weight_decay: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr, weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Update `params` in place from `grads`. The decay term
    /// `param -= lr * wd * param` is applied before the gradient step.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "optimizer",
                    format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::shape("optimizer", "parameter set changed between steps"));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let pv = p.as_mut_slice();
            if self.weight_decay != 0.0 {
                pv.iter_mut().for_each(|w| *w *= decay);
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &gv) in pv.iter_mut().zip(g.as_slice()) {
                        *w -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.first[k].as_mut_slice();
                    let v = self.second[k].as_mut_slice();
                    for (((w, &gv), mi), vi) in pv.iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                        *mi = b1 * *mi + (1.0 - b1) * gv;
                        *vi = b2 * *vi + (1.0 - b2) * gv * gv;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
