//! Synthetic two-domain datasets, their line-oriented file format, and
//! batch sampling.

mod batch;
mod generator;
mod io;
mod probe;

pub use batch::{batch_iter, domain_batches, shuffled, PairedBatch};
pub use generator::{generate_synthetic, GeneratorConfig};
pub use io::{load, save, to_jsonl, SCHEMA_VERSION};
pub use probe::{least_squares_probe, ProbeReport};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::encoder::{Domain, SampleRecord, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut usize {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainCounts {
    pub source: SplitCounts,
    pub target: SplitCounts,
}

impl DomainCounts {
    pub fn get(&self, domain: Domain) -> &SplitCounts {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    fn get_mut(&mut self, domain: Domain) -> &mut SplitCounts {
        match domain {
            Domain::Source => &mut self.source,
            Domain::Target => &mut self.target,
        }
    }

    pub fn total(&self) -> usize {
        self.source.total() + self.target.total()
    }

    /// Counts of the given records.
    pub fn of(records: &[SampleRecord]) -> Self {
        let mut c = Self::default();
        for r in records {
            *c.get_mut(r.domain).get_mut(r.split) += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub d_inst: usize,
    pub d_vis: usize,
    pub n_det: usize,
    pub counts: DomainCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeReport>,
}

/// A header plus its records. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    header: DatasetHeader,
    records: Vec<SampleRecord>,
}

impl DatasetFile {
    /// Checks ids, per-record widths and the header counts.
    pub fn new(header: DatasetHeader, records: Vec<SampleRecord>) -> Result<Self> {
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "schema version {} (expected {SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let mut ids = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            if !ids.insert(r.id) {
                return Err(Error::InvalidArgument(format!("duplicate sample id {}", r.id)));
            }
            check_widths(&header, r)?;
        }
        let counts = DomainCounts::of(&records);
        if counts != header.counts {
            return Err(Error::InvalidArgument(format!(
                "header counts {:?} do not match records {:?}",
                header.counts, counts
            )));
        }
        Ok(Self { header, records })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one domain and split, in file order.
    pub fn split(&self, domain: Domain, split: Split) -> Vec<&SampleRecord> {
        self.records
            .iter()
            .filter(|r| r.domain == domain && r.split == split)
            .collect()
    }
}

fn check_widths(h: &DatasetHeader, r: &SampleRecord) -> Result<()> {
    let bad = r.inst.len() != h.d_inst
        || r.cand.len() != h.d_vis
        || r.cont.len() != h.n_det
        || r.cont.iter().any(|c| c.len() != h.d_vis);
    if bad {
        return Err(Error::InvalidArgument(format!(
            "sample {}: widths (inst {}, cand {}, {} contexts) do not match header (d_inst {}, d_vis {}, N_det {})",
            r.id,
            r.inst.len(),
            r.cand.len(),
            r.cont.len(),
            h.d_inst,
            h.d_vis,
            h.n_det
        )));
    }
    Ok(())
}
