//! Degree-bucketed F1 tables.

use serde::{Deserialize, Serialize};

use super::metrics::f1_scores;
use crate::error::{Error, Result};

/// Degrees `0..=MAX_EXACT_DEGREE` get their own bucket; larger degrees
/// share an "8+" bucket.
pub const MAX_EXACT_DEGREE: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DegreeBucket {
    Exact(usize),
    Overflow,
}

impl DegreeBucket {
    pub fn of(degree: usize) -> Self {
        if degree <= MAX_EXACT_DEGREE {
            DegreeBucket::Exact(degree)
        } else {
            DegreeBucket::Overflow
        }
    }

    pub fn all() -> Vec<DegreeBucket> {
        let mut v: Vec<_> = (0..=MAX_EXACT_DEGREE).map(DegreeBucket::Exact).collect();
        v.push(DegreeBucket::Overflow);
        v
    }

    fn index(self) -> usize {
        match self {
            DegreeBucket::Exact(d) => d,
            DegreeBucket::Overflow => MAX_EXACT_DEGREE + 1,
        }
    }

    pub fn label(self) -> String {
        match self {
            DegreeBucket::Exact(d) => d.to_string(),
            DegreeBucket::Overflow => format!("{}+", MAX_EXACT_DEGREE + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeRow {
    pub bucket: DegreeBucket,
    pub count: usize,
    /// Micro F1 within the bucket; `None` when it is empty.
    pub f1: Option<f64>,
    /// Percentage points above the reference bucket F1.
    pub delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub rows: Vec<DegreeRow>,
}

impl DegreeReport {
    pub fn row(&self, bucket: DegreeBucket) -> &DegreeRow {
        &self.rows[bucket.index()]
    }

    /// Attach deltas against `reference`, bucket by bucket.
    pub fn with_reference(mut self, reference: &DegreeReport) -> Self {
        for (row, r) in self.rows.iter_mut().zip(&reference.rows) {
            row.delta_pct = match (row.f1, r.f1) {
                (Some(a), Some(b)) => Some((a - b) * 100.0),
                _ => None,
            };
        }
        self
    }

    /// Parse the output of [`DegreeReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<DegreeReport> {
        let bad = |what: String| Error::Data(format!("degree.csv: {what}"));
        let mut lines = text.lines();
        if lines.next() != Some("degree,count,f1,delta_pct") {
            return Err(bad("unexpected header".into()));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(format!("bad number {s:?}")))
            }
        };
        let mut rows = Vec::new();
        for (line, bucket) in lines.zip(DegreeBucket::all()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 || f[0] != bucket.label() {
                return Err(bad(format!("unexpected row {line:?}")));
            }
            rows.push(DegreeRow {
                bucket,
                count: f[1].parse().map_err(|_| bad(format!("bad count {:?}", f[1])))?,
                f1: opt(f[2])?,
                delta_pct: opt(f[3])?,
            });
        }
        if rows.len() != MAX_EXACT_DEGREE + 2 {
            return Err(bad(format!("{} rows", rows.len())));
        }
        Ok(DegreeReport { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("degree,count,f1,delta_pct\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.bucket.label(), r.count, opt(r.f1), opt(r.delta_pct)));
        }
        out
    }
}

/// Per-bucket micro F1 of aligned `predictions`/`truths`, bucketed by
/// `degrees` (raw-graph degree of each evaluated node).
pub fn degree_report(
    predictions: &[usize],
    truths: &[usize],
    degrees: &[usize],
    reference: Option<&DegreeReport>,
) -> Result<DegreeReport> {
    if predictions.len() != truths.len() || truths.len() != degrees.len() {
        return Err(Error::shape(
            "degree report",
            format!("{} / {} / {}", predictions.len(), truths.len(), degrees.len()),
        ));
    }
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = vec![Default::default(); MAX_EXACT_DEGREE + 2];
    for ((&p, &t), &d) in predictions.iter().zip(truths).zip(degrees) {
        let g = &mut groups[DegreeBucket::of(d).index()];
        g.0.push(p);
        g.1.push(t);
    }
    let rows = DegreeBucket::all()
        .into_iter()
        .zip(&groups)
        .map(|(bucket, (p, t))| {
            let f1 = if t.is_empty() { None } else { Some(f1_scores(p, t)?.micro) };
            Ok(DegreeRow {
                bucket,
                count: t.len(),
                f1,
                delta_pct: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = DegreeReport { rows };
    Ok(match reference {
        Some(r) => report.with_reference(r),
        None => report,
    })
}
