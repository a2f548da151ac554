use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::encoder::{Domain, SampleRecord, Split};

/// Target-test accuracy of two closed-form linear probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Probe fitted on source train features.
    pub source_probe_accuracy: f64,
    /// Probe fitted on target train features.
    pub target_probe_accuracy: f64,
}

const RIDGE: f64 = 1e-6;

fn features(r: &SampleRecord) -> Vec<f64> {
    let mut x = Vec::with_capacity(r.inst.len() + 2 * r.cand.len() + 1);
    x.extend_from_slice(&r.inst);
    x.extend_from_slice(&r.cand);
    let mut pooled = vec![0.0; r.cand.len()];
    for c in &r.cont {
        pooled.iter_mut().zip(c).for_each(|(p, v)| *p += v);
    }
    if !r.cont.is_empty() {
        let n = r.cont.len() as f64;
        pooled.iter_mut().for_each(|p| *p /= n);
    }
    x.extend_from_slice(&pooled);
    x.push(1.0);
    x
}

/// Ridge-regularized least squares onto ±1 labels.
fn fit(rows: &[&SampleRecord]) -> Option<DVector<f64>> {
    let p = features(rows.first()?).len();
    let x = DMatrix::from_fn(rows.len(), p, |i, j| features(rows[i])[j]);
    let y = DVector::from_fn(rows.len(), |i, _| if rows[i].y == 1 { 1.0 } else { -1.0 });
    let xtx = x.transpose() * &x + DMatrix::identity(p, p) * (RIDGE * rows.len() as f64);
    xtx.cholesky().map(|c| c.solve(&(x.transpose() * y)))
}

fn accuracy(w: &DVector<f64>, rows: &[&SampleRecord]) -> f64 {
    let hits = rows
        .iter()
        .filter(|r| {
            let s: f64 = features(r).iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            (s >= 0.0) == (r.y == 1)
        })
        .count();
    hits as f64 / rows.len() as f64
}

/// Fits one probe per domain on its train split and scores both on the
/// target test split. `None` when a needed split is empty or singular.
pub fn least_squares_probe(records: &[SampleRecord]) -> Option<ProbeReport> {
    let pick = |d: Domain, s: Split| -> Vec<&SampleRecord> {
        records.iter().filter(|r| r.domain == d && r.split == s).collect()
    };
    let test = pick(Domain::Target, Split::Test);
    if test.is_empty() {
        return None;
    }
    let ws = fit(&pick(Domain::Source, Split::Train))?;
    let wt = fit(&pick(Domain::Target, Split::Train))?;
    Some(ProbeReport {
        source_probe_accuracy: accuracy(&ws, &test),
        target_probe_accuracy: accuracy(&wt, &test),
    })
}
