//! Shared helpers for integration tests: seeded random inputs and
//! nested-loop reference implementations of the losses.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharp_core::losses::HarConfig;
use sharp_core::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..classes)).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

fn f(a: &[f64], b: &[f64], tau: f64) -> f64 {
    (cos(a, b) / tau).exp()
}

/// Per-node terms of the hardness-adaptive loss with `a` as the anchor view.
pub struct HarTerms {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    pub loss: Vec<f64>,
    /// Negative weights, `w[i][j]`.
    pub w_neg: Vec<Vec<f64>>,
    pub s_neg: Vec<Vec<f64>>,
}

pub fn har_terms_oracle(a: &Matrix, b: &Matrix, y: &[usize], cfg: &HarConfig) -> HarTerms {
    let n = a.rows();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let intra = if cfg.exclude_intra_self && i == j { 0.0 } else { f(a.row(i), a.row(j), cfg.tau) };
            s[i][j] = intra + f(a.row(i), b.row(j), cfg.tau);
        }
    }
    let same = |i: usize, j: usize| y[i] == y[j];

    // min-max range over positive entries, global or per row
    let bounds = |rows: std::ops::Range<usize>| {
        let mut mx = f64::NEG_INFINITY;
        let mut mn = f64::INFINITY;
        for i in rows {
            for j in 0..n {
                if same(i, j) {
                    mx = mx.max(s[i][j]);
                    mn = mn.min(s[i][j]);
                }
            }
        }
        (mx, mn)
    };
    let global = bounds(0..n);

    let mut pos = vec![0.0; n];
    let mut neg = vec![0.0; n];
    let mut loss = vec![0.0; n];
    let mut w_neg = vec![vec![0.0; n]; n];
    let mut s_neg = vec![vec![0.0; n]; n];
    for i in 0..n {
        let (mx, mn) = if cfg.per_row_minmax { bounds(i..i + 1) } else { global };
        let spread = mx - mn;
        let degenerate = !(spread > 1e-12 * mx.abs());
        for j in 0..n {
            if !same(i, j) {
                continue;
            }
            let sbar = if degenerate { 0.0 } else { (mx - s[i][j]) / spread };
            let w = cfg.alpha * sbar + if i == j { 1.0 } else { 0.0 };
            pos[i] += w * s[i][j];
        }

        let mut cnt_pos = 0.0;
        let mut cnt_neg = 0.0;
        let mut neg_sum = 0.0;
        let mut pos_sum = 0.0;
        for j in 0..n {
            if same(i, j) {
                cnt_pos += 1.0;
                pos_sum += s[i][j];
            } else {
                cnt_neg += 1.0;
                neg_sum += s[i][j];
                s_neg[i][j] = s[i][j];
            }
        }
        let denom = if cfg.negatives_only_mean { cnt_neg } else { n as f64 };
        let mean = if denom > 0.0 { neg_sum / denom } else { 0.0 };
        let mut weighted = 0.0;
        for j in 0..n {
            if !same(i, j) {
                let w = if mean > 0.0 { cfg.beta * s[i][j] / mean } else { 0.0 };
                w_neg[i][j] = w;
                weighted += w * s[i][j];
            }
        }
        let q = cnt_neg / cnt_pos;
        let raw = (weighted - q * cfg.tau_plus * pos_sum) / (1.0 - cfg.tau_plus);
        neg[i] = raw.max((-1.0 / cfg.tau).exp());
        loss[i] = -(pos[i] / (pos[i] + neg[i])).ln();
    }
    HarTerms { pos, neg, loss, w_neg, s_neg }
}

pub fn har_oracle(z1: &Matrix, z2: &Matrix, y: &[usize], cfg: &HarConfig) -> f64 {
    let n = z1.rows() as f64;
    let l12: f64 = har_terms_oracle(z1, z2, y, cfg).loss.iter().sum();
    let l21: f64 = har_terms_oracle(z2, z1, y, cfg).loss.iter().sum();
    (l12 + l21) / (2.0 * n)
}

/// Symmetrized single-positive objective: the twin in the other view is
/// the positive, every other row of both views is a negative.
pub fn grace_oracle(z1: &Matrix, z2: &Matrix, tau: f64) -> f64 {
    let n = z1.rows();
    let side = |u: &Matrix, v: &Matrix| {
        let mut total = 0.0;
        for i in 0..n {
            let p = f(u.row(i), v.row(i), tau);
            let mut d = p;
            for k in 0..n {
                if k != i {
                    d += f(u.row(i), u.row(k), tau) + f(u.row(i), v.row(k), tau);
                }
            }
            total += -(p / d).ln();
        }
        total
    };
    (side(z1, z2) + side(z2, z1)) / (2.0 * n as f64)
}

fn batch(z1: &Matrix, z2: &Matrix) -> Vec<Vec<f64>> {
    (0..z1.rows()).map(|i| z1.row(i).to_vec()).chain((0..z2.rows()).map(|i| z2.row(i).to_vec())).collect()
}

/// Supervised contrastive loss with the average outside the log.
pub fn scl_oracle(z1: &Matrix, z2: &Matrix, y: &[usize], tau: f64) -> f64 {
    let rows = batch(z1, z2);
    let n = z1.rows();
    let label = |a: usize| y[a % n];
    let m = rows.len();
    let mut total = 0.0;
    for a in 0..m {
        let mut denom = 0.0;
        for k in 0..m {
            if k != a {
                denom += f(&rows[a], &rows[k], tau);
            }
        }
        let positives: Vec<usize> = (0..m).filter(|&p| p != a && label(p) == label(a)).collect();
        if positives.is_empty() {
            continue;
        }
        let mut s = 0.0;
        for &p in &positives {
            s += (f(&rows[a], &rows[p], tau) / denom).ln();
        }
        total += -s / positives.len() as f64;
    }
    total / m as f64
}

/// Debiased contrastive loss over the `2N` batch.
pub fn debias_oracle(z1: &Matrix, z2: &Matrix, tau: f64, tau_plus: f64) -> f64 {
    let rows = batch(z1, z2);
    let n = z1.rows();
    let m = rows.len();
    let negatives = (m - 2) as f64;
    if negatives == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..m {
        let twin = (a + n) % m;
        let pos = f(&rows[a], &rows[twin], tau);
        let mut neg = 0.0;
        for k in 0..m {
            if k != a && k != twin {
                neg += f(&rows[a], &rows[k], tau);
            }
        }
        let ng = ((neg - negatives * tau_plus * pos) / (1.0 - tau_plus)).max(negatives * (-1.0 / tau).exp());
        total += -(pos / (pos + ng)).ln();
    }
    total / m as f64
}
