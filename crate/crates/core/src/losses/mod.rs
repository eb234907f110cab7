//! Contrastive objectives over two embedding views.
//!
//! Each loss has a tape form (taking [`Var`]s, used during training) and a
//! plain form over matrices that evaluates on a throwaway tape.

mod baselines;
mod har;
mod hard;

pub use baselines::{
    debias_loss, debias_loss_on, grace_loss, grace_loss_on, scl_loss, scl_loss_on, supervised_loss,
    supervised_loss_on,
};
pub use har::{
    har_loss, har_loss_on, har_node_losses, har_node_losses_on, negative_term, positive_term,
    similarity_bundle, SimilarityBundle,
};
pub use hard::top_k_hard_negatives;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Har,
    Grace,
    Scl,
    Debias,
    /// Cross-entropy on the projector output; the GCN/GAT baseline.
    Supervised,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Har => "har",
            LossKind::Grace => "grace",
            LossKind::Scl => "scl",
            LossKind::Debias => "debias",
            LossKind::Supervised => "supervised",
        }
    }

    pub fn needs_labels(self) -> bool {
        !matches!(self, LossKind::Grace | LossKind::Debias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarConfig {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Class prior, usually `1 / num_classes`.
    pub tau_plus: f64,
    #[serde(default)]
    pub exclude_intra_self: bool,
    /// Min-max normalize each row of `S⁺` separately instead of globally.
    #[serde(default)]
    pub per_row_minmax: bool,
    /// Divide `W⁻` by the mean over negatives only, not over all `N` columns.
    #[serde(default)]
    pub negatives_only_mean: bool,
}

impl HarConfig {
    pub fn new(tau: f64, alpha: f64, beta: f64, num_classes: usize) -> Self {
        HarConfig {
            tau,
            alpha,
            beta,
            tau_plus: 1.0 / num_classes.max(1) as f64,
            exclude_intra_self: false,
            per_row_minmax: false,
            negatives_only_mean: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_tau(self.tau)?;
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} out of (0,1]: {v}")));
            }
        }
        if !(self.tau_plus > 0.0 && self.tau_plus < 1.0) {
            return Err(Error::Config(format!("tau_plus out of (0,1): {}", self.tau_plus)));
        }
        Ok(())
    }

    /// Lower bound applied to every `NEG_i`.
    pub fn floor(&self) -> f64 {
        (-1.0 / self.tau).exp()
    }
}

pub(crate) fn validate_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    Ok(())
}

/// Same-label (`pos`) and different-label (`neg`) indicator matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub pos: Matrix,
    pub neg: Matrix,
}

impl MaskPair {
    pub fn len(&self) -> usize {
        self.pos.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.rows() == 0
    }

    /// Count of positives (diagonal included) in row `i`.
    pub fn positives(&self, i: usize) -> usize {
        self.pos.row(i).iter().filter(|&&v| v != 0.0).count()
    }

    pub fn negatives(&self, i: usize) -> usize {
        self.neg.row(i).iter().filter(|&&v| v != 0.0).count()
    }
}

pub fn build_masks(labels: &[usize]) -> MaskPair {
    let n = labels.len();
    let mut pos = Matrix::zeros(n, n);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == yj {
                pos[(i, j)] = 1.0;
            }
        }
    }
    let neg = pos.map(|v| 1.0 - v);
    MaskPair { pos, neg }
}

/// Masks from optional labels; any missing label is an error.
pub fn build_masks_checked(labels: &[Option<usize>]) -> Result<MaskPair> {
    let full = labels
        .iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::Data(format!("node {i} has no label"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(build_masks(&full))
}

/// Cosine similarity; 0 if either vector is zero.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    crate::matrix::dot(a, b) / (na * nb)
}

/// `exp(sim / tau)`.
pub fn ftau(sim: f64, tau: f64) -> f64 {
    (sim / tau).exp()
}

fn check_views(tape: &Tape, z1: Var, z2: Var) -> Result<usize> {
    let (s1, s2) = (tape.shape(z1), tape.shape(z2));
    if s1 != s2 {
        return Err(Error::shape("views", format!("{s1:?} vs {s2:?}")));
    }
    if s1.0 == 0 {
        return Err(Error::shape("views", "empty embedding matrix"));
    }
    Ok(s1.0)
}

/// Kernel matrix `exp(cos(a_i, b_j) / tau)` on the tape.
pub(crate) fn kernel(tape: &mut Tape, a: Var, b: Var, tau: f64) -> Result<Var> {
    let ua = tape.row_l2_normalize_lenient(a)?;
    let ub = if a == b { ua } else { tape.row_l2_normalize_lenient(b)? };
    let cos = tape.matmul_t(ua, ub)?;
    let scaled = tape.scalar_mul(cos, 1.0 / tau)?;
    tape.exp(scaled)
}

/// Evaluate a tape-form loss on constant inputs.
pub(crate) fn evaluate<F>(z1: &Matrix, z2: &Matrix, f: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, Var, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let a = tape.constant(z1.clone())?;
    let b = tape.constant(z2.clone())?;
    let out = f(&mut tape, a, b)?;
    Ok(tape.value(out).item())
}

/// Dispatch to the configured objective. `labels` may be empty for the
/// label-free losses; `tau_plus` for Debias comes from `har`.
pub fn loss_on(
    tape: &mut Tape,
    kind: LossKind,
    z1: Var,
    z2: Var,
    labels: &[usize],
    har: &HarConfig,
) -> Result<Var> {
    let need = |tape: &Tape| -> Result<()> {
        if labels.len() != tape.shape(z1).0 {
            return Err(Error::shape(
                "loss labels",
                format!("{} labels for {} rows", labels.len(), tape.shape(z1).0),
            ));
        }
        Ok(())
    };
    match kind {
        LossKind::Har => {
            need(tape)?;
            har_loss_on(tape, z1, z2, &build_masks(labels), har)
        }
        LossKind::Grace => grace_loss_on(tape, z1, z2, har.tau),
        LossKind::Scl => {
            need(tape)?;
            scl_loss_on(tape, z1, z2, labels, har.tau)
        }
        LossKind::Debias => debias_loss_on(tape, z1, z2, har.tau, har.tau_plus),
        LossKind::Supervised => {
            need(tape)?;
            let labels: Vec<Option<usize>> = labels.iter().copied().map(Some).collect();
            supervised_loss_on(tape, z1, &labels)
        }
    }
}
