//! Hardness-adaptive reweighted contrastive loss.

use super::{check_views, kernel, MaskPair};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{build_masks, HarConfig};
use crate::matrix::Matrix;

/// `S`, `S⁺ = S ∘ Mask⁺` and `S⁻ = S ∘ Mask⁻` for one anchor view.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBundle {
    pub s: Matrix,
    pub s_pos: Matrix,
    pub s_neg: Matrix,
}

struct MaskVars {
    pos: Var,
    neg: Var,
    eye: Var,
}

struct Bundle {
    s: Var,
    pos: Var,
    neg: Var,
}

fn mask_vars(tape: &mut Tape, masks: &MaskPair) -> Result<MaskVars> {
    Ok(MaskVars {
        pos: tape.constant(masks.pos.clone())?,
        neg: tape.constant(masks.neg.clone())?,
        eye: tape.constant(Matrix::identity(masks.len()))?,
    })
}

fn bundle_on(tape: &mut Tape, anchor: Var, other: Var, m: &MaskVars, cfg: &HarConfig) -> Result<Bundle> {
    let mut intra = kernel(tape, anchor, anchor, cfg.tau)?;
    if cfg.exclude_intra_self {
        let n = tape.shape(anchor).0;
        let off = tape.constant(Matrix::filled(n, n, 1.0).zip_map(&Matrix::identity(n), |a, b| a - b))?;
        intra = tape.mul(intra, off)?;
    }
    let inter = kernel(tape, anchor, other, cfg.tau)?;
    let s = tape.add(intra, inter)?;
    let pos = tape.mul(s, m.pos)?;
    let neg = tape.mul(s, m.neg)?;
    Ok(Bundle { s, pos, neg })
}

/// `POS_i = Σ_j (α S̄⁺ + I)_ij S⁺_ij` with `S̄⁺` the reversed min-max
/// normalization of `S⁺`. The minimum is taken over the positive support.
fn positive_on(tape: &mut Tape, s_pos: Var, masks: &MaskPair, m: &MaskVars, cfg: &HarConfig) -> Result<Var> {
    let big = tape.value(s_pos).as_slice().iter().fold(0.0f64, |a, &b| a.max(b)) + 1.0;
    let lift = tape.constant(masks.neg.scale(big))?;
    let lifted = tape.add(s_pos, lift)?;
    let (mx, mn) = if cfg.per_row_minmax {
        (tape.row_max(s_pos)?, tape.row_min(lifted)?)
    } else {
        (tape.max_all(s_pos)?, tape.min_all(lifted)?)
    };
    let range = tape.sub(mx, mn)?;
    let keep = tape
        .value(range)
        .zip_map(tape.value(mx), |r, hi| if r > 1e-12 * hi.abs() { 1.0 } else { 0.0 });
    let keep = tape.constant(keep)?;
    let range = tape.mul(range, keep)?;
    let inv = tape.safe_recip(range)?;
    let gap = tape.sub(mx, s_pos)?;
    let sbar = tape.mul(gap, inv)?;
    let w = tape.scalar_mul(sbar, cfg.alpha)?;
    let weighted = tape.mul(w, s_pos)?;
    let extra = tape.row_sum(weighted)?;
    let diag = tape.mul(s_pos, m.eye)?;
    let diag = tape.row_sum(diag)?;
    tape.add(extra, diag)
}

/// Returns `(W⁻, NEG)`.
fn negative_on(
    tape: &mut Tape,
    s_pos: Var,
    s_neg: Var,
    masks: &MaskPair,
    cfg: &HarConfig,
) -> Result<(Var, Var)> {
    let n = masks.len();
    let row_neg = tape.row_sum(s_neg)?;
    let mean = if cfg.negatives_only_mean {
        let inv_cnt: Vec<f64> = (0..n)
            .map(|i| match masks.negatives(i) {
                0 => 0.0,
                c => 1.0 / c as f64,
            })
            .collect();
        let inv_cnt = tape.constant(Matrix::column(&inv_cnt))?;
        tape.mul(row_neg, inv_cnt)?
    } else {
        tape.scalar_mul(row_neg, 1.0 / n as f64)?
    };
    let inv = tape.safe_recip(mean)?;
    let w = tape.mul(s_neg, inv)?;
    let w = tape.scalar_mul(w, cfg.beta)?;
    let weighted = tape.mul(w, s_neg)?;
    let neg_sum = tape.row_sum(weighted)?;
    let q: Vec<f64> = (0..n)
        .map(|i| cfg.tau_plus * masks.negatives(i) as f64 / masks.positives(i) as f64)
        .collect();
    let q = tape.constant(Matrix::column(&q))?;
    let pos_sum = tape.row_sum(s_pos)?;
    let correction = tape.mul(pos_sum, q)?;
    let raw = tape.sub(neg_sum, correction)?;
    let raw = tape.scalar_mul(raw, 1.0 / (1.0 - cfg.tau_plus))?;
    let neg = tape.clamp_min(raw, cfg.floor())?;
    Ok((w, neg))
}

fn node_losses_dir(
    tape: &mut Tape,
    anchor: Var,
    other: Var,
    masks: &MaskPair,
    m: &MaskVars,
    cfg: &HarConfig,
) -> Result<Var> {
    let b = bundle_on(tape, anchor, other, m, cfg)?;
    let pos = positive_on(tape, b.pos, masks, m, cfg)?;
    let (_, neg) = negative_on(tape, b.pos, b.neg, masks, cfg)?;
    let total = tape.add(pos, neg)?;
    let lt = tape.log(total)?;
    let lp = tape.log(pos)?;
    tape.sub(lt, lp)
}

fn check_masks(tape: &Tape, z1: Var, z2: Var, masks: &MaskPair) -> Result<usize> {
    let n = check_views(tape, z1, z2)?;
    if masks.len() != n {
        return Err(Error::shape("har masks", format!("{} masks for {n} rows", masks.len())));
    }
    Ok(n)
}

/// Per-node losses `ℓ_i(Z1, Z2)` with `Z1` as anchor view, shape `(N, 1)`.
pub fn har_node_losses_on(tape: &mut Tape, z1: Var, z2: Var, masks: &MaskPair, cfg: &HarConfig) -> Result<Var> {
    cfg.validate()?;
    check_masks(tape, z1, z2, masks)?;
    let m = mask_vars(tape, masks)?;
    node_losses_dir(tape, z1, z2, masks, &m, cfg)
}

/// Symmetrized loss `(Σ ℓ(Z1,Z2) + Σ ℓ(Z2,Z1)) / 2N`.
pub fn har_loss_on(tape: &mut Tape, z1: Var, z2: Var, masks: &MaskPair, cfg: &HarConfig) -> Result<Var> {
    cfg.validate()?;
    let n = check_masks(tape, z1, z2, masks)?;
    let m = mask_vars(tape, masks)?;
    let a = node_losses_dir(tape, z1, z2, masks, &m, cfg)?;
    let b = node_losses_dir(tape, z2, z1, masks, &m, cfg)?;
    let a = tape.sum_all(a)?;
    let b = tape.sum_all(b)?;
    let total = tape.add(a, b)?;
    tape.scalar_mul(total, 1.0 / (2 * n) as f64)
}

pub fn similarity_bundle(z1: &Matrix, z2: &Matrix, masks: &MaskPair, cfg: &HarConfig) -> Result<SimilarityBundle> {
    let mut tape = Tape::new();
    let a = tape.constant(z1.clone())?;
    let b = tape.constant(z2.clone())?;
    check_masks(&tape, a, b, masks)?;
    let m = mask_vars(&mut tape, masks)?;
    let bd = bundle_on(&mut tape, a, b, &m, cfg)?;
    Ok(SimilarityBundle {
        s: tape.value(bd.s).clone(),
        s_pos: tape.value(bd.pos).clone(),
        s_neg: tape.value(bd.neg).clone(),
    })
}

pub fn positive_term(s_pos: &Matrix, masks: &MaskPair, cfg: &HarConfig) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let sp = tape.constant(s_pos.clone())?;
    let m = mask_vars(&mut tape, masks)?;
    let pos = positive_on(&mut tape, sp, masks, &m, cfg)?;
    Ok(tape.value(pos).as_slice().to_vec())
}

/// `(W⁻, NEG)` as plain values.
pub fn negative_term(s_pos: &Matrix, s_neg: &Matrix, masks: &MaskPair, cfg: &HarConfig) -> Result<(Matrix, Vec<f64>)> {
    let mut tape = Tape::new();
    let sp = tape.constant(s_pos.clone())?;
    let sn = tape.constant(s_neg.clone())?;
    let (w, neg) = negative_on(&mut tape, sp, sn, masks, cfg)?;
    Ok((tape.value(w).clone(), tape.value(neg).as_slice().to_vec()))
}

pub fn har_node_losses(z1: &Matrix, z2: &Matrix, labels: &[usize], cfg: &HarConfig) -> Result<Vec<f64>> {
    let masks = build_masks(labels);
    let mut tape = Tape::new();
    let a = tape.constant(z1.clone())?;
    let b = tape.constant(z2.clone())?;
    let l = har_node_losses_on(&mut tape, a, b, &masks, cfg)?;
    Ok(tape.value(l).as_slice().to_vec())
}

pub fn har_loss(z1: &Matrix, z2: &Matrix, labels: &[usize], cfg: &HarConfig) -> Result<f64> {
    let masks = build_masks(labels);
    super::evaluate(z1, z2, |t, a, b| har_loss_on(t, a, b, &masks, cfg))
}
