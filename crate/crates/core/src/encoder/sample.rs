use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::Source => Domain::Target,
            Domain::Target => Domain::Source,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// Axis-aligned box in image coordinates normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if ![x1, y1, x2, y2].into_iter().all(unit) {
            return Err(Error::InvalidArgument(format!(
                "box ({x1}, {y1}, {x2}, {y2}) leaves the unit square"
            )));
        }
        if x2 < x1 || y2 < y1 {
            return Err(Error::InvalidArgument(format!(
                "box ({x1}, {y1}, {x2}, {y2}) has negative extent"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// `[x1, y1, x2, y2, w, h, w * h]`.
    pub fn positional_encoding(&self) -> [f64; 7] {
        let w = self.x2 - self.x1;
        let h = self.y2 - self.y1;
        [self.x1, self.y1, self.x2, self.y2, w, h, w * h]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.corners()
    }
}

pub fn positional_encoding(b: &BoundingBox) -> [f64; 7] {
    b.positional_encoding()
}

/// One labeled instance: does the candidate region match the instruction?
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    pub domain: Domain,
    pub split: Split,
    pub y: u8,
    pub inst: Vec<f64>,
    pub cand: Vec<f64>,
    pub cand_box: BoundingBox,
    pub cont: Vec<Vec<f64>>,
    pub cont_boxes: Vec<BoundingBox>,
}

impl SampleRecord {
    pub fn label(&self) -> usize {
        self.y as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.y > 1 {
            return Err(Error::InvalidArgument(format!(
                "sample {}: label {} is not 0 or 1",
                self.id, self.y
            )));
        }
        if self.cont.len() != self.cont_boxes.len() {
            return Err(Error::InvalidArgument(format!(
                "sample {}: {} context features but {} context boxes",
                self.id,
                self.cont.len(),
                self.cont_boxes.len()
            )));
        }
        let finite = self
            .inst
            .iter()
            .chain(&self.cand)
            .chain(self.cont.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument(format!(
                "sample {}: non-finite feature value",
                self.id
            )));
        }
        Ok(())
    }
}
