use rand::seq::index;

use crate::cluster::PrototypeBank;
use crate::encoder::Domain;
use crate::error::{Error, Result};
use crate::seed;

/// Negatives for one anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSet {
    /// Batch positions of instance negatives; never contains the anchor.
    pub instance: Vec<usize>,
    /// Per round: negative prototype indices of the anchor's own domain.
    pub own: Vec<Vec<usize>>,
    /// Per round: negative prototype indices of the other domain.
    pub cross: Vec<Vec<usize>>,
    /// Fewer than the requested instance negatives were available.
    pub instance_short: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativeCounts {
    /// `r`.
    pub instance: usize,
    /// `r′`.
    pub prototype: usize,
}

impl Default for NegativeCounts {
    fn default() -> Self {
        Self {
            instance: 32,
            prototype: 32,
        }
    }
}

/// Checks that every round can supply `r′` negatives plus one positive.
pub fn check_prototype_capacity(schedule: &[usize], r_proto: usize) -> Result<()> {
    for (m, &k) in schedule.iter().enumerate() {
        if k < r_proto + 1 {
            return Err(Error::Config(format!(
                "k^({}) = {k} is too small: selecting {r_proto} negative prototypes and one \
                 positive needs at least r' + 1 = {} clusters",
                m + 1,
                r_proto + 1
            )));
        }
    }
    Ok(())
}

fn draw_excluding(rng: &mut impl rand::Rng, n: usize, exclude: usize, amount: usize) -> Vec<usize> {
    index::sample(rng, n - 1, amount)
        .into_iter()
        .map(|j| if j >= exclude { j + 1 } else { j })
        .collect()
}

/// Where a batch sits in the run, for seeding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchCoords {
    pub seed: u64,
    pub epoch: usize,
    pub batch: usize,
}

/// Draws negatives for every sample of a same-domain batch. The stream of
/// sample `i` is keyed by (seed, epoch, batch, domain, i).
pub fn sample_negatives(
    ids: &[u64],
    domain: Domain,
    bank: &PrototypeBank,
    counts: NegativeCounts,
    at: BatchCoords,
) -> Result<Vec<NegativeSet>> {
    check_prototype_capacity(bank.schedule(), counts.prototype)?;
    let n = ids.len();
    if n == 1 {
        log::warn!("batch of one {} sample: instance term has no negatives", domain.name());
    }
    let take = counts.instance.min(n.saturating_sub(1));
    let short = take < counts.instance;
    if short && n > 0 {
        log::debug!(
            "only {take} instance negatives available for a {} batch of {n} (r = {})",
            domain.name(),
            counts.instance
        );
    }
    let rounds = bank.rounds_per_domain();
    ids.iter()
        .enumerate()
        .map(|(i, &id)| {
            let mut rng = seed::rng(
                at.seed,
                &[seed::NEGATIVES, at.epoch as u64, at.batch as u64, domain.index() as u64, i as u64],
            );
            let instance = if take == 0 {
                Vec::new()
            } else {
                draw_excluding(&mut rng, n, i, take)
            };
            let mut own = Vec::with_capacity(rounds);
            let mut cross = Vec::with_capacity(rounds);
            for m in 0..rounds {
                for (protos, out) in [(domain, &mut own), (domain.other(), &mut cross)] {
                    let k = bank.round(protos, m).k;
                    let s = bank.nearest(domain, id, protos, m).ok_or_else(|| {
                        Error::Invariant(format!("sample {id} missing from the prototype bank"))
                    })?;
                    out.push(draw_excluding(&mut rng, k, s, counts.prototype));
                }
            }
            Ok(NegativeSet {
                instance,
                own,
                cross,
                instance_short: short,
            })
        })
        .collect()
}
