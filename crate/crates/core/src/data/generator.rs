use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{least_squares_probe, DatasetFile, DatasetHeader, DomainCounts, SplitCounts, SCHEMA_VERSION};
use crate::encoder::{BoundingBox, Domain, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::seed;

const MAX_ROUNDS: usize = 1000;

/// Knobs of the synthetic two-domain generator.
///
/// Both domains share latent clusters and a linear label rule over the
/// latent vector. Source features are a fixed linear read-out of the latent
/// plus `source_noise`; target features read out an affinely shifted latent
/// (`z + shift_scale * (B z + b)`) plus `target_noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub latent_clusters: usize,
    pub latent_dim: usize,
    /// Spread of the cluster centres relative to the unit within-cluster noise.
    pub cluster_spread: f64,
    pub shift_scale: f64,
    pub source_noise: f64,
    pub target_noise: f64,
    /// Latents closer than this to the label boundary are rejected.
    pub margin: f64,
    pub source: SplitCounts,
    pub target: SplitCounts,
    pub n_det: usize,
    pub d_inst: usize,
    pub d_vis: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_clusters: 8,
            latent_dim: 8,
            cluster_spread: 3.0,
            shift_scale: 0.6,
            source_noise: 0.3,
            target_noise: 1.5,
            margin: 0.0,
            source: SplitCounts {
                train: 1536,
                val: 256,
                test: 256,
            },
            target: SplitCounts {
                train: 128,
                val: 256,
                test: 512,
            },
            n_det: 4,
            d_inst: 16,
            d_vis: 16,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("cluster_spread", self.cluster_spread),
            ("shift_scale", self.shift_scale),
            ("source_noise", self.source_noise),
            ("target_noise", self.target_noise),
            ("margin", self.margin),
        ];
        for (name, v) in scales {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("data.{name} = {v} must be finite and >= 0")));
            }
        }
        let dims = [
            ("latent_clusters", self.latent_clusters),
            ("latent_dim", self.latent_dim),
            ("d_inst", self.d_inst),
            ("d_vis", self.d_vis),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("data.{name} must be at least 1")));
            }
        }
        for (domain, c) in [("source", &self.source), ("target", &self.target)] {
            for split in Split::ALL {
                if c.get(split) == 0 {
                    return Err(Error::Config(format!(
                        "data.{domain}.{} must be at least 1",
                        split.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let scale = 1.0 / (cols as f64).sqrt();
    (0..rows).map(|_| gaussian(rng, cols, scale)).collect()
}

fn apply(m: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum()).collect()
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let x1 = rng.random_range(0.0..0.8);
    let y1 = rng.random_range(0.0..0.8);
    let x2 = rng.random_range(x1 + 0.05..=1.0);
    let y2 = rng.random_range(y1 + 0.05..=1.0);
    BoundingBox::new(x1, y1, x2, y2).expect("inside the unit square")
}

/// Fixed random structure shared by every sample of a dataset.
struct World {
    centres: Vec<Vec<f64>>,
    rule: Vec<f64>,
    inst: Vec<Vec<f64>>,
    cand: Vec<Vec<f64>>,
    cont: Vec<Vec<Vec<f64>>>,
    shift_matrix: Vec<Vec<f64>>,
    shift_offset: Vec<f64>,
}

impl World {
    fn new(cfg: &GeneratorConfig) -> Self {
        let mut rng = seed::rng(cfg.seed, &[seed::GENERATE]);
        let l = cfg.latent_dim;
        let centres = (0..cfg.latent_clusters)
            .map(|_| gaussian(&mut rng, l, cfg.cluster_spread))
            .collect();
        let mut rule = gaussian(&mut rng, l, 1.0);
        let norm = rule.iter().map(|v| v * v).sum::<f64>().sqrt();
        rule.iter_mut().for_each(|v| *v /= norm);
        Self {
            centres,
            rule,
            inst: gaussian_matrix(&mut rng, cfg.d_inst, l),
            cand: gaussian_matrix(&mut rng, cfg.d_vis, l),
            cont: (0..cfg.n_det).map(|_| gaussian_matrix(&mut rng, cfg.d_vis, l)).collect(),
            shift_matrix: gaussian_matrix(&mut rng, l, l),
            shift_offset: gaussian(&mut rng, l, 1.0),
        }
    }

    fn latent(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let c = &self.centres[rng.random_range(0..self.centres.len())];
        gaussian(rng, c.len(), 1.0).iter().zip(c).map(|(e, m)| e + m).collect()
    }

    fn score(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.rule).map(|(a, b)| a * b).sum()
    }

    fn shifted(&self, z: &[f64], scale: f64) -> Vec<f64> {
        let bz = apply(&self.shift_matrix, z);
        z.iter()
            .zip(bz.iter().zip(&self.shift_offset))
            .map(|(v, (b, o))| v + scale * (b + o))
            .collect()
    }

    fn read_out(&self, m: &[Vec<f64>], z: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        apply(m, z)
            .into_iter()
            .zip(gaussian(rng, m.len(), noise))
            .map(|(a, e)| a + e)
            .collect()
    }
}

/// Draws labelled latents for one (domain, split) with exactly
/// `floor(n / 2)` positives.
fn labelled_latents(
    world: &World,
    cfg: &GeneratorConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Vec<f64>, u8)>> {
    let mut need = [n - n / 2, n / 2];
    let mut out = Vec::with_capacity(n);
    for _ in 0..MAX_ROUNDS {
        for _ in 0..n {
            let z = world.latent(rng);
            let s = world.score(&z);
            if s.abs() < cfg.margin {
                continue;
            }
            let y = usize::from(s > 0.0);
            if need[y] > 0 {
                need[y] -= 1;
                out.push((z, y as u8));
            }
        }
        if need == [0, 0] {
            return Ok(out);
        }
    }
    Err(Error::Config(format!(
        "cannot balance labels with margin {} after {MAX_ROUNDS} rejection rounds \
         ({} negatives and {} positives still missing)",
        cfg.margin, need[0], need[1]
    )))
}

/// Generates a dataset fully determined by `cfg` (including its seed).
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<DatasetFile> {
    cfg.validate()?;
    let world = World::new(cfg);
    let mut records = Vec::with_capacity(cfg.source.total() + cfg.target.total());
    let mut id = 0u64;
    for domain in [Domain::Source, Domain::Target] {
        let counts = match domain {
            Domain::Source => cfg.source,
            Domain::Target => cfg.target,
        };
        let noise = match domain {
            Domain::Source => cfg.source_noise,
            Domain::Target => cfg.target_noise,
        };
        for (si, split) in Split::ALL.into_iter().enumerate() {
            let mut rng = seed::rng(cfg.seed, &[seed::GENERATE, domain.index() as u64, si as u64]);
            for (z, y) in labelled_latents(&world, cfg, counts.get(split), &mut rng)? {
                let z = match domain {
                    Domain::Source => z,
                    Domain::Target => world.shifted(&z, cfg.shift_scale),
                };
                let inst = world.read_out(&world.inst, &z, noise, &mut rng);
                let cand = world.read_out(&world.cand, &z, noise, &mut rng);
                let cont = world
                    .cont
                    .iter()
                    .map(|m| world.read_out(m, &z, noise, &mut rng))
                    .collect();
                let cand_box = random_box(&mut rng);
                let cont_boxes = (0..cfg.n_det).map(|_| random_box(&mut rng)).collect();
                records.push(SampleRecord {
                    id,
                    domain,
                    split,
                    y,
                    inst,
                    cand,
                    cand_box,
                    cont,
                    cont_boxes,
                });
                id += 1;
            }
        }
    }
    let probe = least_squares_probe(&records);
    if let Some(p) = &probe {
        if cfg.shift_scale > 0.0 && p.source_probe_accuracy >= p.target_probe_accuracy {
            log::warn!(
                "domain gap probe: source-trained linear probe reaches {:.3} on target test, \
                 target-trained reaches {:.3}",
                p.source_probe_accuracy,
                p.target_probe_accuracy
            );
        }
    }
    let header = DatasetHeader {
        schema_version: SCHEMA_VERSION,
        d_inst: cfg.d_inst,
        d_vis: cfg.d_vis,
        n_det: cfg.n_det,
        counts: DomainCounts::of(&records),
        generator: Some(cfg.clone()),
        probe,
    };
    DatasetFile::new(header, records)
}
