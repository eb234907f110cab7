//! Hard-negative extraction from a row of `S⁻`.

/// Indices of the `k` largest positive entries of `s_neg_row`, largest
/// first, ties to the lower index. Zero entries are positives and never
/// returned; `k` is clamped to the number of negatives.
pub fn top_k_hard_negatives(s_neg_row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..s_neg_row.len()).filter(|&j| s_neg_row[j] > 0.0).collect();
    idx.sort_by(|&a, &b| s_neg_row[b].total_cmp(&s_neg_row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_largest_with_ties_and_clamp() {
        assert_eq!(top_k_hard_negatives(&[0.0, 5.0, 3.0, 0.0, 9.0], 2), vec![4, 1]);
        assert_eq!(top_k_hard_negatives(&[0.0, 5.0, 3.0, 0.0, 9.0], 10), vec![4, 1, 2]);
        assert_eq!(top_k_hard_negatives(&[2.0, 1.0, 2.0, 2.0], 2), vec![0, 2]);
        assert!(top_k_hard_negatives(&[0.0, 0.0], 3).is_empty());
    }
}
