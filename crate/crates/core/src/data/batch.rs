use rand::seq::SliceRandom;

use super::DatasetFile;
use crate::encoder::{Domain, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::seed;

/// One optimization step's worth of samples from each domain.
#[derive(Debug, Clone)]
pub struct PairedBatch<'a> {
    pub index: usize,
    pub source: Vec<&'a SampleRecord>,
    pub target: Vec<&'a SampleRecord>,
}

/// Shuffle keyed by (seed, epoch, domain).
pub fn shuffled(mut records: Vec<&SampleRecord>, domain: Domain, epoch: usize, seed: u64) -> Vec<&SampleRecord> {
    let mut rng = seed::rng(seed, &[seed::SHUFFLE, epoch as u64, domain.index() as u64]);
    records.shuffle(&mut rng);
    records
}

fn check_batch_size(batch_size: usize) -> Result<()> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "train.batch_size = {batch_size}: instance negatives need at least 2 samples per batch"
        )));
    }
    Ok(())
}

/// Batch width when only `available` samples can be paired.
fn width(batch_size: usize, available: usize) -> usize {
    batch_size.min(available)
}

/// Paired train batches for one epoch. Both domains are shuffled, then cut
/// into equal-width batches until the smaller domain runs out; leftovers are
/// dropped. If the smaller domain holds fewer than `batch_size` samples the
/// width shrinks to its size, and an epoch with fewer than 2 is empty.
pub fn batch_iter(dataset: &DatasetFile, batch_size: usize, epoch: usize, seed: u64) -> Result<Vec<PairedBatch<'_>>> {
    check_batch_size(batch_size)?;
    let src = dataset.split(Domain::Source, Split::Train);
    let tgt = dataset.split(Domain::Target, Split::Train);
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "paired batches need train samples in both domains (source {}, target {})",
            src.len(),
            tgt.len()
        )));
    }
    let src = shuffled(src, Domain::Source, epoch, seed);
    let tgt = shuffled(tgt, Domain::Target, epoch, seed);
    let w = width(batch_size, src.len().min(tgt.len()));
    if w < 2 {
        log::warn!("smaller domain has a single train sample: no paired batches");
        return Ok(Vec::new());
    }
    Ok(src
        .chunks_exact(w)
        .zip(tgt.chunks_exact(w))
        .enumerate()
        .map(|(index, (s, t))| PairedBatch {
            index,
            source: s.to_vec(),
            target: t.to_vec(),
        })
        .collect())
}

/// Train batches of one domain, with the same shuffle and drop rule as
/// [`batch_iter`].
pub fn domain_batches(
    dataset: &DatasetFile,
    domain: Domain,
    batch_size: usize,
    epoch: usize,
    seed: u64,
) -> Result<Vec<Vec<&SampleRecord>>> {
    check_batch_size(batch_size)?;
    let rs = dataset.split(domain, Split::Train);
    if rs.is_empty() {
        return Err(Error::InvalidArgument(format!("no {} train samples", domain.name())));
    }
    let rs = shuffled(rs, domain, epoch, seed);
    let w = width(batch_size, rs.len());
    if w < 2 {
        return Ok(Vec::new());
    }
    Ok(rs.chunks_exact(w).map(<[_]>::to_vec).collect())
}
