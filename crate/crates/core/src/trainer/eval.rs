use serde::Serialize;

use crate::data::DatasetFile;
use crate::encoder::{predicted_label, prob_positive, Branch, Domain, ModelState, SampleRecord, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub n: usize,
    pub accuracy: f64,
    /// Mean cross-entropy of the true class.
    pub ce: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

/// Scores `p(ŷ = 1)` predictions; `p = 0.5` counts as positive.
pub fn score_predictions(p_positive: &[f64], labels: &[usize]) -> Result<Evaluation> {
    if p_positive.is_empty() || p_positive.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            p_positive.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    let mut ce = 0.0;
    for (&p, &y) in p_positive.iter().zip(labels) {
        match (predicted_label(p), y) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => tn += 1,
        }
        let p_true = if y == 1 { p } else { 1.0 - p };
        ce -= p_true.ln();
    }
    let n = labels.len();
    Ok(Evaluation {
        n,
        accuracy: (tp + tn) as f64 / n as f64,
        ce: ce / n as f64,
        tp,
        fp,
        fn_,
        tn,
    })
}

/// Classifies `samples` with the online encoder.
pub fn evaluate_records(model: &ModelState, samples: &[&SampleRecord]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let emb = model.encode_batch(samples, Branch::Online)?;
    let logits = model.logits(&emb)?;
    // Cross-entropy straight from the logits keeps confident errors finite.
    let mut ce = 0.0;
    let mut probs = Vec::with_capacity(samples.len());
    for (row, s) in logits.rows().zip(samples) {
        let m = row[0].max(row[1]);
        let lse = m + ((row[0] - m).exp() + (row[1] - m).exp()).ln();
        ce += lse - row[s.label()];
        probs.push(prob_positive(row));
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label()).collect();
    let mut e = score_predictions(&probs, &labels)?;
    e.ce = ce / samples.len() as f64;
    Ok(e)
}

/// Evaluates one split of one domain.
pub fn evaluate(model: &ModelState, dataset: &DatasetFile, domain: Domain, split: Split) -> Result<Evaluation> {
    let rs = dataset.split(domain, split);
    if rs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} {} split is empty",
            domain.name(),
            split.name()
        )));
    }
    evaluate_records(model, &rs)
}
