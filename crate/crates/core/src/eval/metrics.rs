//! Confusion-matrix F1 scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True instances of the class.
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub micro: f64,
    /// Mean F1 over classes that occur in either truths or predictions.
    pub macro_: f64,
    pub per_class: Vec<ClassScores>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn f1_scores(predictions: &[usize], truths: &[usize]) -> Result<F1Scores> {
    if predictions.len() != truths.len() {
        return Err(Error::shape(
            "f1",
            format!("{} predictions, {} truths", predictions.len(), truths.len()),
        ));
    }
    if truths.is_empty() {
        return Err(Error::Data("F1 of an empty set".into()));
    }
    let c = predictions.iter().chain(truths).max().map_or(0, |m| m + 1);
    let mut tp = vec![0usize; c];
    let mut pred = vec![0usize; c];
    let mut actual = vec![0usize; c];
    for (&p, &t) in predictions.iter().zip(truths) {
        pred[p] += 1;
        actual[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let per_class: Vec<ClassScores> = (0..c)
        .map(|k| {
            let precision = ratio(tp[k], pred[k]);
            let recall = ratio(tp[k], actual[k]);
            ClassScores {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: actual[k],
                predicted: pred[k],
            }
        })
        .collect();
    let total_tp: usize = tp.iter().sum();
    // pooled precision and recall coincide for single-label inputs
    let micro = ratio(total_tp, truths.len());
    let present: Vec<&ClassScores> = per_class.iter().filter(|s| s.support + s.predicted > 0).collect();
    let macro_ = present.iter().map(|s| s.f1).sum::<f64>() / present.len() as f64;
    Ok(F1Scores {
        micro,
        macro_,
        per_class,
    })
}

/// Fraction of matching entries.
pub fn accuracy(predictions: &[usize], truths: &[usize]) -> f64 {
    let hits = predictions.iter().zip(truths).filter(|(a, b)| a == b).count();
    ratio(hits, truths.len())
}
