//! Training objectives, built as differentiable graphs.
//!
//! Per paired batch of `n` source and `n` target samples:
//!
//! * `L_Target`, `L_Source`: instance term plus the round-averaged
//!   prototype term against the sample's own-domain prototypes.
//! * `L_S2T`, `L_T2S`: round-averaged prototype term against the other
//!   domain's prototypes.
//! * `L_Intra = L_Target + L_Source`, `L_Inter = L_S2T + L_T2S`,
//!   `L_DualProtoNCE = L_Intra + L_Inter`.
//! * `L_t`, `L_s`: cross-entropy of the sample plus the round-averaged
//!   cross-entropy of its closest own-domain prototype.
//! * `L = λ L_DualProtoNCE + L_t + L_s`.
//!
//! Every per-domain sum over samples is divided by that domain's batch size
//! ([`batch_normalizer`]); that single constant keeps the step size
//! independent of the batch size without changing the weighting between
//! terms.

mod contrastive;
mod negatives;

pub use contrastive::{info_nce, proto_term};
pub use negatives::{
    check_prototype_capacity, sample_negatives, BatchCoords, NegativeCounts, NegativeSet,
};

use serde::Serialize;

use crate::cluster::PrototypeBank;
use crate::encoder::{classifier_graph, Domain};
use crate::error::{Error, Result};
use crate::numcore::{normalized, Graph, Tensor, Var};
pub(crate) use contrastive::info_nce_with;
use contrastive::{instance_losses, prototype_losses};

/// Default contrastive weight `λ`.
pub const DEFAULT_LAMBDA: f64 = 1.0 / 32.0;

/// Divisor applied to every per-domain sum over samples.
pub fn batch_normalizer(n: usize) -> f64 {
    n as f64
}

/// Switches used by tests and reductions of the full objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossHooks {
    /// Weight of the prototype term inside `L_Target` / `L_Source`.
    pub prototype_weight: f64,
    /// Weight of `L_S2T` and `L_T2S`.
    pub inter_weight: f64,
    /// Include the prototype cross-entropy terms of `L_t` / `L_s`.
    pub prototype_ce: bool,
    /// Negate the gradient flowing through the instance logits.
    pub reverse_instance_grad: bool,
}

impl Default for LossHooks {
    fn default() -> Self {
        Self {
            prototype_weight: 1.0,
            inter_weight: 1.0,
            prototype_ce: true,
            reverse_instance_grad: false,
        }
    }
}

/// One domain's half of a paired batch.
#[derive(Debug, Clone)]
pub struct DomainBatch {
    pub domain: Domain,
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    /// Online embeddings `[n, d]`.
    pub online: Var,
    /// Momentum embeddings `[n, d]`, constants.
    pub momentum: Tensor,
    pub negatives: Vec<NegativeSet>,
}

impl DomainBatch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Everything shared by both domains in one step.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub bank: &'a PrototypeBank,
    /// Epoch of the step; must equal the bank's epoch.
    pub epoch: usize,
    pub inv_temperature: Var,
    pub classifier: &'a [Var],
    pub lambda: f64,
    pub hooks: LossHooks,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub info_nce_target: f64,
    pub info_nce_source: f64,
    pub proto_target: f64,
    pub proto_source: f64,
    pub l_target: f64,
    pub l_source: f64,
    pub l_intra: f64,
    pub l_s2t: f64,
    pub l_t2s: f64,
    pub l_inter: f64,
    pub l_dual: f64,
    pub l_t: f64,
    pub l_s: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub const FIELDS: [&'static str; 15] = [
        "info_nce_target",
        "info_nce_source",
        "proto_target",
        "proto_source",
        "l_target",
        "l_source",
        "l_intra",
        "l_s2t",
        "l_t2s",
        "l_inter",
        "l_dual",
        "l_t",
        "l_s",
        "total",
        "lambda",
    ];

    pub fn values(&self) -> [f64; 15] {
        [
            self.info_nce_target,
            self.info_nce_source,
            self.proto_target,
            self.proto_source,
            self.l_target,
            self.l_source,
            self.l_intra,
            self.l_s2t,
            self.l_t2s,
            self.l_inter,
            self.l_dual,
            self.l_t,
            self.l_s,
            self.total,
            self.lambda,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

fn check_epoch(ctx: &LossContext<'_>) -> Result<()> {
    if ctx.bank.epoch() != ctx.epoch {
        return Err(Error::Invariant(format!(
            "prototype bank from epoch {} used in epoch {}",
            ctx.bank.epoch(),
            ctx.epoch
        )));
    }
    Ok(())
}

fn check_batch(g: &Graph, b: &DomainBatch) -> Result<()> {
    let n = b.len();
    let rows = g.value(b.online).rows_cols().0;
    if b.labels.len() != n || b.negatives.len() != n || rows != n || b.momentum.rows_cols().0 != n {
        return Err(Error::shape(
            "loss",
            format!(
                "{} batch: {n} ids, {} labels, {} negative sets, {rows} online rows, {} momentum rows",
                b.domain.name(),
                b.labels.len(),
                b.negatives.len(),
                b.momentum.rows_cols().0
            ),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(format!("empty {} batch", b.domain.name())));
    }
    if let Some(y) = b.labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidArgument(format!("label {y} is not 0 or 1")));
    }
    Ok(())
}

fn nearest(ctx: &LossContext<'_>, b: &DomainBatch, protos: Domain, m: usize) -> Result<Vec<usize>> {
    b.ids
        .iter()
        .map(|&id| {
            ctx.bank.nearest(b.domain, id, protos, m).ok_or_else(|| {
                Error::Invariant(format!(
                    "no nearest {} prototype recorded for {} sample {id}",
                    protos.name(),
                    b.domain.name()
                ))
            })
        })
        .collect()
}

fn normalized_rows(t: &Tensor) -> Tensor {
    let (n, d) = t.rows_cols();
    Tensor::matrix(n, d, t.rows().flat_map(normalized).collect()).expect("same shape")
}

/// Chains `add` over a non-empty list, left to right.
fn add_all(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(acc)
}

/// Sum over samples of the prototype term against `protos` prototypes, per round.
fn prototype_sums(
    g: &mut Graph,
    ctx: &LossContext<'_>,
    b: &DomainBatch,
    anchors: Var,
    protos: Domain,
) -> Result<Vec<Var>> {
    let own = protos == b.domain;
    (0..ctx.bank.rounds_per_domain())
        .map(|m| {
            let round = ctx.bank.round(protos, m);
            let pos = nearest(ctx, b, protos, m)?;
            let cands = pos
                .iter()
                .zip(&b.negatives)
                .map(|(&s, neg)| {
                    let negs = if own { &neg.own[m] } else { &neg.cross[m] };
                    std::iter::once(s).chain(negs.iter().copied()).collect()
                })
                .collect();
            let per = prototype_losses(g, anchors, &round.normalized_centroids, &round.concentration, cands)?;
            g.sum(per)
        })
        .collect()
}

/// One domain's intra-domain loss (`L_Target` or `L_Source`).
#[derive(Debug, Clone, Copy)]
pub struct DomainIntra {
    pub loss: Var,
    pub info_nce: f64,
    pub proto: f64,
}

fn domain_intra(g: &mut Graph, ctx: &LossContext<'_>, b: &DomainBatch) -> Result<DomainIntra> {
    let n = b.len();
    let inv_n = 1.0 / batch_normalizer(n);
    let rounds = ctx.bank.rounds_per_domain();
    let anchors = g.l2_normalize_rows(b.online)?;
    let keys = normalized_rows(&b.momentum);
    let cands = b
        .negatives
        .iter()
        .enumerate()
        .map(|(i, neg)| std::iter::once(i).chain(neg.instance.iter().copied()).collect())
        .collect();
    let per = instance_losses(
        g,
        anchors,
        &keys,
        cands,
        ctx.inv_temperature,
        ctx.hooks.reverse_instance_grad,
    )?;
    let info_sum = g.sum(per)?;
    let sums = prototype_sums(g, ctx, b, anchors, b.domain)?;
    let proto_total = add_all(g, &sums)?;
    let proto_avg = g.scale(proto_total, ctx.hooks.prototype_weight / rounds as f64)?;
    let raw = g.add(info_sum, proto_avg)?;
    let loss = g.scale(raw, inv_n)?;
    Ok(DomainIntra {
        loss,
        info_nce: g.value(info_sum).item() * inv_n,
        proto: g.value(proto_avg).item() * inv_n,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct IntraLoss {
    pub target: DomainIntra,
    pub source: DomainIntra,
    /// `L_Target + L_Source`.
    pub intra: Var,
}

pub fn intra_domain_loss(
    g: &mut Graph,
    ctx: &LossContext<'_>,
    source: &DomainBatch,
    target: &DomainBatch,
) -> Result<IntraLoss> {
    check_epoch(ctx)?;
    check_batch(g, source)?;
    check_batch(g, target)?;
    let t = domain_intra(g, ctx, target)?;
    let s = domain_intra(g, ctx, source)?;
    let intra = g.add(t.loss, s.loss)?;
    Ok(IntraLoss {
        target: t,
        source: s,
        intra,
    })
}

fn domain_cross(g: &mut Graph, ctx: &LossContext<'_>, b: &DomainBatch) -> Result<Var> {
    let inv_n = 1.0 / batch_normalizer(b.len());
    let rounds = ctx.bank.rounds_per_domain();
    let anchors = g.l2_normalize_rows(b.online)?;
    let sums = prototype_sums(g, ctx, b, anchors, b.domain.other())?;
    let total = add_all(g, &sums)?;
    let avg = g.scale(total, ctx.hooks.inter_weight / rounds as f64)?;
    g.scale(avg, inv_n)
}

#[derive(Debug, Clone, Copy)]
pub struct InterLoss {
    /// Source anchors against target prototypes.
    pub s2t: Var,
    /// Target anchors against source prototypes.
    pub t2s: Var,
    /// `L_S2T + L_T2S`.
    pub inter: Var,
}

pub fn inter_domain_loss(
    g: &mut Graph,
    ctx: &LossContext<'_>,
    source: &DomainBatch,
    target: &DomainBatch,
) -> Result<InterLoss> {
    check_epoch(ctx)?;
    check_batch(g, source)?;
    check_batch(g, target)?;
    let s2t = domain_cross(g, ctx, source)?;
    let t2s = domain_cross(g, ctx, target)?;
    let inter = g.add(s2t, t2s)?;
    Ok(InterLoss { s2t, t2s, inter })
}

#[derive(Debug, Clone, Copy)]
pub struct DualLoss {
    pub intra: IntraLoss,
    pub inter: InterLoss,
    /// `L_Intra + L_Inter`.
    pub dual: Var,
}

pub fn dual_proto_nce(
    g: &mut Graph,
    ctx: &LossContext<'_>,
    source: &DomainBatch,
    target: &DomainBatch,
) -> Result<DualLoss> {
    let intra = intra_domain_loss(g, ctx, source, target)?;
    let inter = inter_domain_loss(g, ctx, source, target)?;
    let dual = g.add(intra.intra, inter.inter)?;
    Ok(DualLoss { intra, inter, dual })
}

/// Sum of `CE(g(rows), labels)` over rows.
pub fn cross_entropy_sum(g: &mut Graph, classifier: &[Var], rows: Var, labels: &[usize]) -> Result<Var> {
    let logits = classifier_graph(g, classifier, rows)?;
    let lp = g.log_softmax_rows(logits)?;
    let ce = g.nll(lp, labels)?;
    g.sum(ce)
}

/// `L_t` or `L_s`: per-sample cross-entropy plus the round-averaged
/// cross-entropy of the closest own-domain prototype, under the sample's
/// label. Prototypes enter as constants, so their terms only train `g`.
pub fn classification_loss(g: &mut Graph, ctx: &LossContext<'_>, b: &DomainBatch) -> Result<Var> {
    check_batch(g, b)?;
    let inv_n = 1.0 / batch_normalizer(b.len());
    let ce = cross_entropy_sum(g, ctx.classifier, b.online, &b.labels)?;
    let raw = if ctx.hooks.prototype_ce {
        let rounds = ctx.bank.rounds_per_domain();
        let mut sums = Vec::with_capacity(rounds);
        for m in 0..rounds {
            let round = ctx.bank.round(b.domain, m);
            let pos = nearest(ctx, b, b.domain, m)?;
            let rows: Vec<Vec<f64>> = pos.iter().map(|&s| round.centroids.row(s).to_vec()).collect();
            let protos = g.constant(Tensor::from_rows(&rows)?);
            sums.push(cross_entropy_sum(g, ctx.classifier, protos, &b.labels)?);
        }
        let total = add_all(g, &sums)?;
        let avg = g.scale(total, 1.0 / rounds as f64)?;
        g.add(ce, avg)?
    } else {
        ce
    };
    g.scale(raw, inv_n)
}

#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    pub total: Var,
    pub dual: DualLoss,
    pub l_t: Var,
    pub l_s: Var,
    pub breakdown: LossBreakdown,
}

/// `L = λ L_DualProtoNCE + L_t + L_s`.
pub fn total_loss(
    g: &mut Graph,
    ctx: &LossContext<'_>,
    source: &DomainBatch,
    target: &DomainBatch,
) -> Result<LossOutput> {
    let dual = dual_proto_nce(g, ctx, source, target)?;
    let l_t = classification_loss(g, ctx, target)?;
    let l_s = classification_loss(g, ctx, source)?;
    let weighted = g.scale(dual.dual, ctx.lambda)?;
    let with_t = g.add(weighted, l_t)?;
    let total = g.add(with_t, l_s)?;
    let v = |x: Var| g.value(x).item();
    let breakdown = LossBreakdown {
        info_nce_target: dual.intra.target.info_nce,
        info_nce_source: dual.intra.source.info_nce,
        proto_target: dual.intra.target.proto,
        proto_source: dual.intra.source.proto,
        l_target: v(dual.intra.target.loss),
        l_source: v(dual.intra.source.loss),
        l_intra: v(dual.intra.intra),
        l_s2t: v(dual.inter.s2t),
        l_t2s: v(dual.inter.t2s),
        l_inter: v(dual.inter.inter),
        l_dual: v(dual.dual),
        l_t: v(l_t),
        l_s: v(l_s),
        total: v(total),
        lambda: ctx.lambda,
    };
    Ok(LossOutput {
        total,
        dual,
        l_t,
        l_s,
        breakdown,
    })
}
