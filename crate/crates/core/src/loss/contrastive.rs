//! Instance and prototype contrastive terms over unit-norm embeddings.
//!
//! Both terms share one shape: for anchor `a` and candidates `c_0..c_r`
//! (positive first) with per-candidate inverse temperatures `w_j`,
//!
//! ```text
//! loss(a) = -log( exp(w_0 a·c_0) / Σ_j exp(w_j a·c_j) )
//! ```
//!
//! The instance term uses the learnable `1/τ` for every candidate; the
//! prototype term uses `1/φ_j` of each prototype.

use crate::error::{Error, Result};
use crate::numcore::{norm, Graph, Tensor, Var};

const UNIT_TOLERANCE: f64 = 1e-9;

/// `lse(logits_i) − logits_i[0]` per row, `[n, w] -> [n]`.
fn positive_first_nll(g: &mut Graph, logits: Var) -> Result<Var> {
    let n = g.value(logits).rows_cols().0;
    let lse = g.log_sum_exp_rows(logits)?;
    let pos = g.gather_cols(logits, vec![vec![0]; n])?;
    let pos = g.reshape(pos, vec![n])?;
    g.sub(lse, pos)
}

/// Per-anchor instance losses `[n]`.
///
/// `anchors` are unit rows `[n, d]`; `keys` are constant unit rows `[n_k, d]`;
/// `candidates[i]` lists key rows for anchor `i`, positive first.
pub(crate) fn instance_losses(
    g: &mut Graph,
    anchors: Var,
    keys: &Tensor,
    candidates: Vec<Vec<usize>>,
    inv_temperature: Var,
    reverse_grad: bool,
) -> Result<Var> {
    let k = g.constant(keys.clone());
    let kt = g.transpose(k)?;
    let sims = g.matmul(anchors, kt)?;
    let picked = g.gather_cols(sims, candidates)?;
    let mut logits = g.scale_by(picked, inv_temperature)?;
    if reverse_grad {
        logits = g.reverse_grad(logits)?;
    }
    positive_first_nll(g, logits)
}

/// Per-anchor prototype losses `[n]`.
///
/// `prototypes` are unit rows `[k, d]` with concentrations `phi`;
/// `candidates[i]` lists prototype indices for anchor `i`, positive first.
pub(crate) fn prototype_losses(
    g: &mut Graph,
    anchors: Var,
    prototypes: &Tensor,
    phi: &[f64],
    candidates: Vec<Vec<usize>>,
) -> Result<Var> {
    if let Some(bad) = phi.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::InvalidArgument(format!("concentration {bad} is not positive")));
    }
    let n = candidates.len();
    let w = candidates.first().map_or(0, Vec::len);
    let inv_phi: Vec<f64> = candidates.iter().flatten().map(|&j| 1.0 / phi[j]).collect();
    let h = g.constant(prototypes.clone());
    let ht = g.transpose(h)?;
    let sims = g.matmul(anchors, ht)?;
    let picked = g.gather_cols(sims, candidates)?;
    let scale = g.constant(Tensor::matrix(n, w, inv_phi)?);
    let logits = g.mul(picked, scale)?;
    positive_first_nll(g, logits)
}

fn check_unit(what: &str, row: &[f64]) -> Result<()> {
    let n = norm(row);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "{what} must be unit-norm, has norm {n}"
        )));
    }
    Ok(())
}

fn anchor_row(g: &mut Graph, anchor: Var) -> Result<Var> {
    let t = g.value(anchor);
    check_unit("anchor", t.data())?;
    match t.shape() {
        [1, _] => Ok(anchor),
        [d] => {
            let d = *d;
            g.reshape(anchor, vec![1, d])
        }
        s => Err(Error::shape("info_nce", format!("anchor must be one row, got {s:?}"))),
    }
}

/// Instance contrastive loss of one unit-norm anchor against its positive
/// and negatives. The positive is part of the denominator.
pub fn info_nce(
    g: &mut Graph,
    anchor: Var,
    positive: &[f64],
    negatives: &[Vec<f64>],
    inv_temperature: Var,
) -> Result<Var> {
    info_nce_with(g, anchor, positive, negatives, inv_temperature, false)
}

pub(crate) fn info_nce_with(
    g: &mut Graph,
    anchor: Var,
    positive: &[f64],
    negatives: &[Vec<f64>],
    inv_temperature: Var,
    reverse_grad: bool,
) -> Result<Var> {
    let s = g.value(inv_temperature).item();
    if !(s > 0.0 && s <= 100.0) {
        return Err(Error::InvalidArgument(format!("1/tau = {s} outside (0, 100]")));
    }
    let a = anchor_row(g, anchor)?;
    check_unit("positive", positive)?;
    let mut rows = vec![positive.to_vec()];
    for neg in negatives {
        check_unit("negative", neg)?;
        rows.push(neg.clone());
    }
    let keys = Tensor::from_rows(&rows)?;
    let out = instance_losses(g, a, &keys, vec![(0..rows.len()).collect()], inv_temperature, reverse_grad)?;
    g.reshape(out, vec![])
}

/// Prototype contrastive loss of one unit-norm anchor. `prototypes` rows
/// must be unit-norm; `positive` is the index of the closest prototype.
pub fn proto_term(
    g: &mut Graph,
    anchor: Var,
    prototypes: &Tensor,
    phi: &[f64],
    positive: usize,
    negatives: &[usize],
) -> Result<Var> {
    let a = anchor_row(g, anchor)?;
    let (k, _) = prototypes.rows_cols();
    if phi.len() != k {
        return Err(Error::shape("proto_term", format!("{} concentrations for {k} prototypes", phi.len())));
    }
    if negatives.len() + 1 > k {
        return Err(Error::Config(format!(
            "{k} prototypes cannot supply {} negatives plus a positive",
            negatives.len()
        )));
    }
    for row in prototypes.rows() {
        check_unit("prototype", row)?;
    }
    let mut cands = vec![positive];
    cands.extend_from_slice(negatives);
    if cands.iter().any(|&j| j >= k) || negatives.contains(&positive) {
        return Err(Error::InvalidArgument(
            "prototype indices out of range or positive listed as negative".into(),
        ));
    }
    let out = prototype_losses(g, a, prototypes, phi, vec![cands])?;
    g.reshape(out, vec![])
}
