//! Baseline objectives: GRACE, supervised contrastive (SCL), debiased
//! contrastive (Debias) and plain cross-entropy.
//!
//! The contrastive baselines work on the `2N` multiview batch: row `a < N`
//! is node `a` in view one, row `a + N` is the same node in view two.
//!
//! * GRACE: Zhu et al., "Deep Graph Contrastive Representation Learning", 2020.
//! * SCL: Khosla et al., "Supervised Contrastive Learning", NeurIPS 2020
//!   (the `L_out` variant).
//! * Debias: Chuang et al., "Debiased Contrastive Learning", NeurIPS 2020.

use super::{check_views, validate_tau};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

struct Multiview {
    /// `cos(u_a, u_b) / tau`.
    logits: Var,
    /// `exp(logits)` with the diagonal zeroed.
    kernel: Var,
    n: usize,
}

fn multiview(tape: &mut Tape, z1: Var, z2: Var, tau: f64) -> Result<Multiview> {
    validate_tau(tau)?;
    let n = check_views(tape, z1, z2)?;
    let z = tape.concat_rows(&[z1, z2])?;
    let u = tape.row_l2_normalize_lenient(z)?;
    let cos = tape.matmul_t(u, u)?;
    let logits = tape.scalar_mul(cos, 1.0 / tau)?;
    let k = tape.exp(logits)?;
    let off = Matrix::filled(2 * n, 2 * n, 1.0).zip_map(&Matrix::identity(2 * n), |a, b| a - b);
    let off = tape.constant(off)?;
    let kernel = tape.mul(k, off)?;
    Ok(Multiview { logits, kernel, n })
}

/// Indicator of each row's other-view twin.
fn twin_mask(n: usize) -> Matrix {
    let mut m = Matrix::zeros(2 * n, 2 * n);
    for a in 0..n {
        m[(a, a + n)] = 1.0;
        m[(a + n, a)] = 1.0;
    }
    m
}

fn twin_logits(tape: &mut Tape, mv: &Multiview) -> Result<Var> {
    let twin = tape.constant(twin_mask(mv.n))?;
    let picked = tape.mul(mv.logits, twin)?;
    tape.row_sum(picked)
}

/// Symmetrized GRACE loss: one positive (the twin), intra- and inter-view
/// negatives.
pub fn grace_loss_on(tape: &mut Tape, z1: Var, z2: Var, tau: f64) -> Result<Var> {
    let mv = multiview(tape, z1, z2, tau)?;
    let denom = tape.row_sum(mv.kernel)?;
    let log_denom = tape.log(denom)?;
    let pos = twin_logits(tape, &mv)?;
    let per = tape.sub(log_denom, pos)?;
    tape.mean_all(per)
}

/// Supervised contrastive loss: positives of an anchor are all other rows
/// with its label (the twin included). Anchors without positives add 0 but
/// still count in the mean.
pub fn scl_loss_on(tape: &mut Tape, z1: Var, z2: Var, labels: &[usize], tau: f64) -> Result<Var> {
    let mv = multiview(tape, z1, z2, tau)?;
    let n = mv.n;
    if labels.len() != n {
        return Err(Error::shape("scl labels", format!("{} labels for {n} rows", labels.len())));
    }
    let label = |a: usize| labels[a % n];
    let mut weights = Matrix::zeros(2 * n, 2 * n);
    let mut has_pos = vec![0.0; 2 * n];
    for a in 0..2 * n {
        let count = (0..2 * n).filter(|&b| b != a && label(b) == label(a)).count();
        if count == 0 {
            continue;
        }
        has_pos[a] = 1.0;
        for b in (0..2 * n).filter(|&b| b != a && label(b) == label(a)) {
            weights[(a, b)] = 1.0 / count as f64;
        }
    }
    let denom = tape.row_sum(mv.kernel)?;
    let log_denom = tape.log(denom)?;
    let has_pos = tape.constant(Matrix::column(&has_pos))?;
    let log_denom = tape.mul(log_denom, has_pos)?;
    let weights = tape.constant(weights)?;
    let pos = tape.mul(mv.logits, weights)?;
    let pos = tape.row_sum(pos)?;
    let per = tape.sub(log_denom, pos)?;
    tape.mean_all(per)
}

/// InfoNCE with the debiased negative estimator
/// `g = max((mean_neg f − τ⁺ f_pos) / (1 − τ⁺), e^{−1/τ})` over the
/// `2N − 2` non-twin rows.
pub fn debias_loss_on(tape: &mut Tape, z1: Var, z2: Var, tau: f64, tau_plus: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&tau_plus) {
        return Err(Error::Config(format!("tau_plus out of [0,1): {tau_plus}")));
    }
    let mv = multiview(tape, z1, z2, tau)?;
    let m = 2 * mv.n - 2;
    if m == 0 {
        return tape.constant(Matrix::scalar(0.0));
    }
    let twin = tape.constant(twin_mask(mv.n))?;
    let f_pos = tape.mul(mv.kernel, twin)?;
    let f_pos = tape.row_sum(f_pos)?;
    let all = tape.row_sum(mv.kernel)?;
    let neg_sum = tape.sub(all, f_pos)?;
    let mean_neg = tape.scalar_mul(neg_sum, 1.0 / m as f64)?;
    let bias = tape.scalar_mul(f_pos, tau_plus)?;
    let g = tape.sub(mean_neg, bias)?;
    let g = tape.scalar_mul(g, 1.0 / (1.0 - tau_plus))?;
    let g = tape.clamp_min(g, (-1.0 / tau).exp())?;
    let mg = tape.scalar_mul(g, m as f64)?;
    let denom = tape.add(f_pos, mg)?;
    let log_denom = tape.log(denom)?;
    let pos = twin_logits(tape, &mv)?;
    let per = tape.sub(log_denom, pos)?;
    tape.mean_all(per)
}

/// Mean softmax cross-entropy of `logits` rows over labelled nodes.
pub fn supervised_loss_on(tape: &mut Tape, logits: Var, labels: &[Option<usize>]) -> Result<Var> {
    let (n, c) = tape.shape(logits);
    if labels.len() != n {
        return Err(Error::shape("supervised labels", format!("{} labels for {n} rows", labels.len())));
    }
    let labelled = labels.iter().flatten().count();
    if labelled == 0 {
        return Err(Error::Data("supervised loss needs at least one labelled node".into()));
    }
    let mut onehot = Matrix::zeros(n, c);
    let mut weight = vec![0.0; n];
    for (i, l) in labels.iter().enumerate() {
        if let Some(y) = *l {
            if y >= c {
                return Err(Error::shape("supervised labels", format!("label {y} with {c} outputs")));
            }
            onehot[(i, y)] = 1.0;
            weight[i] = 1.0 / labelled as f64;
        }
    }
    let row_max: Vec<f64> = (0..n)
        .map(|i| tape.value(logits).row(i).iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .collect();
    let shift = tape.constant(Matrix::column(&row_max))?;
    let shifted = tape.sub(logits, shift)?;
    let e = tape.exp(shifted)?;
    let sum = tape.row_sum(e)?;
    let lse = tape.log(sum)?;
    let onehot = tape.constant(onehot)?;
    let picked = tape.mul(shifted, onehot)?;
    let picked = tape.row_sum(picked)?;
    let per = tape.sub(lse, picked)?;
    let weight = tape.constant(Matrix::column(&weight))?;
    let per = tape.mul(per, weight)?;
    tape.sum_all(per)
}

pub fn grace_loss(z1: &Matrix, z2: &Matrix, tau: f64) -> Result<f64> {
    super::evaluate(z1, z2, |t, a, b| grace_loss_on(t, a, b, tau))
}

pub fn scl_loss(z1: &Matrix, z2: &Matrix, labels: &[usize], tau: f64) -> Result<f64> {
    super::evaluate(z1, z2, |t, a, b| scl_loss_on(t, a, b, labels, tau))
}

pub fn debias_loss(z1: &Matrix, z2: &Matrix, tau: f64, tau_plus: f64) -> Result<f64> {
    super::evaluate(z1, z2, |t, a, b| debias_loss_on(t, a, b, tau, tau_plus))
}

pub fn supervised_loss(logits: &Matrix, labels: &[Option<usize>]) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone())?;
    let out = supervised_loss_on(&mut tape, x, labels)?;
    Ok(tape.value(out).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grace_degenerate_cases() {
        let one = Matrix::from_rows(&[[0.3, 0.4]]);
        assert!(grace_loss(&one, &one, 0.5).unwrap().abs() < 1e-15);
        let same = Matrix::filled(4, 3, 1.0);
        let l = grace_loss(&same, &same, 0.5).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn scl_with_singleton_classes_is_grace() {
        let z1 = Matrix::from_rows(&[[1.0, 0.2], [-0.3, 0.8], [0.5, 0.5]]);
        let z2 = Matrix::from_rows(&[[0.9, 0.1], [-0.2, 1.0], [0.1, 0.7]]);
        let a = scl_loss(&z1, &z2, &[0, 1, 2], 0.5).unwrap();
        let b = grace_loss(&z1, &z2, 0.5).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn debias_without_prior_is_grace() {
        let z1 = Matrix::from_rows(&[[1.0, 0.2], [-0.3, 0.8], [0.5, 0.5]]);
        let z2 = Matrix::from_rows(&[[0.9, 0.1], [-0.2, 1.0], [0.1, 0.7]]);
        let a = debias_loss(&z1, &z2, 0.5, 0.0).unwrap();
        let b = grace_loss(&z1, &z2, 0.5).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(debias_loss(&z1, &z2, 0.5, 1.0).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Matrix::zeros(3, 4);
        let l = supervised_loss(&logits, &[Some(0), None, Some(3)]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!(supervised_loss(&logits, &[None, None, None]).is_err());
        assert!(supervised_loss(&logits, &[Some(4), None, None]).is_err());
    }
}
