use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use super::kmeans::kmeans;
use crate::encoder::{Domain, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::numcore::{dot, normalized, Tensor};
use crate::seed;

/// Floor applied to raw concentration values before rescaling.
pub const CONCENTRATION_FLOOR: f64 = 1e-8;

/// Per-cluster concentration factors, rescaled to have mean `tau_prime`.
///
/// Raw value for cluster `i` with members `C_i` and centroid `h_i`:
/// `Σ ‖z − h_i‖ / (|C_i| · ln(|C_i| + alpha))`. Singleton clusters take the
/// largest raw value among clusters with two or more members.
pub fn concentration(
    points: &Tensor,
    centroids: &Tensor,
    assignments: &[usize],
    alpha: f64,
    tau_prime: f64,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !(tau_prime > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "concentration needs alpha > 0 and tau' > 0, got {alpha} and {tau_prime}"
        )));
    }
    let (k, _) = centroids.rows_cols();
    if assignments.len() != points.rows_cols().0 {
        return Err(Error::shape("concentration", "one assignment per point"));
    }
    let mut dist_sum = vec![0.0; k];
    let mut sizes = vec![0usize; k];
    for (p, &a) in points.rows().zip(assignments) {
        if a >= k {
            return Err(Error::InvalidArgument(format!("assignment {a} out of {k} clusters")));
        }
        let c = centroids.row(a);
        dist_sum[a] += p.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        sizes[a] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Invariant(format!("cluster {empty} is empty after repair")));
    }
    let spread: Vec<f64> = dist_sum
        .iter()
        .zip(&sizes)
        .map(|(&s, &n)| {
            let n = n as f64;
            s / (n * (n + alpha).ln())
        })
        .collect();
    // A singleton has zero spread; it borrows the loosest multi-member cluster's.
    let loosest = spread
        .iter()
        .zip(&sizes)
        .filter(|(_, &n)| n > 1)
        .map(|(&p, _)| p)
        .fold(0.0, f64::max);
    let raw: Vec<f64> = spread
        .iter()
        .zip(&sizes)
        .map(|(&p, &n)| if n == 1 { loosest } else { p }.max(CONCENTRATION_FLOOR))
        .collect();
    let mean = raw.iter().sum::<f64>() / k as f64;
    let scale = tau_prime / mean;
    Ok(raw.into_iter().map(|r| r * scale).collect())
}

/// Index of the prototype with the largest cosine similarity; ties go to the
/// lowest index. `normalized_prototypes` rows must already be unit-norm.
pub fn nearest_prototype(normalized_point: &[f64], normalized_prototypes: &Tensor) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, h) in normalized_prototypes.rows().enumerate() {
        let s = dot(normalized_point, h);
        if s > best.1 {
            best = (j, s);
        }
    }
    best.0
}

/// One k-means pass over one domain's normalized momentum embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringRound {
    /// Round index, starting at 1.
    pub m: usize,
    pub k: usize,
    /// Cluster means `[k, d]` of the normalized embeddings.
    pub centroids: Tensor,
    /// The centroids scaled to unit norm.
    pub normalized_centroids: Tensor,
    /// Cluster index per sample, aligned with the domain's ids.
    pub assignments: Vec<usize>,
    pub concentration: Vec<f64>,
    pub objective: f64,
    pub objective_history: Vec<f64>,
    /// Nearest prototype of this round for each sample of the same domain.
    pub nearest_own: Vec<usize>,
    /// Nearest prototype of this round for each sample of the other domain.
    pub nearest_other: Vec<usize>,
}

impl ClusteringRound {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainPrototypes {
    pub domain: Domain,
    pub ids: Vec<u64>,
    pub rounds: Vec<ClusteringRound>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankParams<'a> {
    pub schedule: &'a [usize],
    pub alpha: f64,
    pub tau_prime: f64,
    pub seed: u64,
    pub epoch: usize,
}

/// Prototypes of both domains for one epoch. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    epoch: usize,
    schedule: Vec<usize>,
    tau_prime: f64,
    source: DomainPrototypes,
    target: DomainPrototypes,
    position: [HashMap<u64, usize>; 2],
}

impl PrototypeBank {
    /// Clusters each domain's momentum embeddings once per schedule entry.
    /// Each round draws from its own seeded stream, shared by both domains,
    /// so identical domains get identical prototypes.
    pub fn build(source: &EmbeddingMatrix, target: &EmbeddingMatrix, params: BankParams<'_>) -> Result<Self> {
        let schedule = params.schedule;
        if schedule.is_empty() {
            return Err(Error::Config("cluster.k_schedule must not be empty".into()));
        }
        if source.domain != Domain::Source || target.domain != Domain::Target {
            return Err(Error::InvalidArgument("bank expects (source, target) embeddings".into()));
        }
        for (m, &k) in schedule.iter().enumerate() {
            let smallest = source.len().min(target.len());
            if k == 0 || k > smallest {
                return Err(Error::Config(format!(
                    "k^({}) = {k} needs at least {k} samples per domain, smallest domain has {smallest}",
                    m + 1
                )));
            }
        }
        let norm = [source.normalized(), target.normalized()];
        let ids = [&source.ids, &target.ids];
        let mut rounds: [Vec<ClusteringRound>; 2] = [Vec::new(), Vec::new()];
        for domain in [Domain::Source, Domain::Target] {
            let own = domain.index();
            let other = domain.other().index();
            for (mi, &k) in schedule.iter().enumerate() {
                let run_seed = seed::derive(params.seed, &[params.epoch as u64, mi as u64]);
                let km = kmeans(&norm[own], k, run_seed)?;
                let phi = concentration(&norm[own], &km.centroids, &km.assignments, params.alpha, params.tau_prime)?;
                let (_, d) = km.centroids.rows_cols();
                let unit = Tensor::matrix(k, d, km.centroids.rows().flat_map(normalized).collect())?;
                let nearest_own = norm[own].rows().map(|z| nearest_prototype(z, &unit)).collect();
                let nearest_other = norm[other].rows().map(|z| nearest_prototype(z, &unit)).collect();
                rounds[own].push(ClusteringRound {
                    m: mi + 1,
                    k,
                    centroids: km.centroids,
                    normalized_centroids: unit,
                    assignments: km.assignments,
                    concentration: phi,
                    objective: km.objective,
                    objective_history: km.history,
                    nearest_own,
                    nearest_other,
                });
            }
        }
        let [src_rounds, tgt_rounds] = rounds;
        let position = ids.map(|ids| ids.iter().enumerate().map(|(i, &id)| (id, i)).collect());
        Ok(Self {
            epoch: params.epoch,
            schedule: schedule.to_vec(),
            tau_prime: params.tau_prime,
            source: DomainPrototypes {
                domain: Domain::Source,
                ids: source.ids.clone(),
                rounds: src_rounds,
            },
            target: DomainPrototypes {
                domain: Domain::Target,
                ids: target.ids.clone(),
                rounds: tgt_rounds,
            },
            position,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn rounds_per_domain(&self) -> usize {
        self.schedule.len()
    }

    pub fn domain(&self, domain: Domain) -> &DomainPrototypes {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    pub fn round(&self, prototypes_of: Domain, m: usize) -> &ClusteringRound {
        &self.domain(prototypes_of).rounds[m]
    }

    /// Index `s` of the prototype (from `prototypes_of`, round `m`, 0-based)
    /// closest to the sample `id` of `sample_domain`.
    pub fn nearest(&self, sample_domain: Domain, id: u64, prototypes_of: Domain, m: usize) -> Option<usize> {
        let pos = *self.position[sample_domain.index()].get(&id)?;
        let round = self.domain(prototypes_of).rounds.get(m)?;
        if sample_domain == prototypes_of {
            round.nearest_own.get(pos).copied()
        } else {
            round.nearest_other.get(pos).copied()
        }
    }

    /// Largest `|mean(φ) − τ′|` over every round of both domains.
    pub fn concentration_mean_error(&self) -> f64 {
        self.source
            .rounds
            .iter()
            .chain(&self.target.rounds)
            .map(|r| {
                let mean = r.concentration.iter().sum::<f64>() / r.k as f64;
                (mean - self.tau_prime).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Human-readable JSON of centroids, cluster sizes and concentrations.
    pub fn debug_dump(&self) -> String {
        #[derive(Serialize)]
        struct RoundDump<'a> {
            domain: &'static str,
            m: usize,
            k: usize,
            objective: f64,
            sizes: Vec<usize>,
            concentration: &'a [f64],
            centroids: Vec<&'a [f64]>,
        }
        #[derive(Serialize)]
        struct Dump<'a> {
            epoch: usize,
            schedule: &'a [usize],
            rounds: Vec<RoundDump<'a>>,
        }
        let rounds = [&self.source, &self.target]
            .into_iter()
            .flat_map(|d| {
                d.rounds.iter().map(move |r| RoundDump {
                    domain: d.domain.name(),
                    m: r.m,
                    k: r.k,
                    objective: r.objective,
                    sizes: r.cluster_sizes(),
                    concentration: &r.concentration,
                    centroids: r.centroids.rows().collect(),
                })
            })
            .collect();
        serde_json::to_string_pretty(&Dump {
            epoch: self.epoch,
            schedule: &self.schedule,
            rounds,
        })
        .expect("serializable")
    }

    pub fn write_debug_dump(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.debug_dump()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_clusters_get_tau_prime() {
        let pts = Tensor::from_rows(&[vec![-1.0], vec![-3.0], vec![1.0], vec![3.0]]).unwrap();
        let c = Tensor::from_rows(&[vec![-2.0], vec![2.0]]).unwrap();
        let phi = concentration(&pts, &c, &[0, 0, 1, 1], 10.0, 0.2).unwrap();
        assert!((phi[0] - 0.2).abs() < 1e-12 && (phi[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn coincident_points_hit_the_floor_then_rescale() {
        let pts = Tensor::from_rows(&[vec![1.0], vec![1.0], vec![5.0]]).unwrap();
        let c = Tensor::from_rows(&[vec![1.0], vec![5.0]]).unwrap();
        let phi = concentration(&pts, &c, &[0, 0, 1], 10.0, 0.2).unwrap();
        assert_eq!(phi, vec![0.2, 0.2]);
    }

    #[test]
    fn raw_value_uses_natural_log() {
        // Single cluster {0, 2} around 1: raw = 2 / (2 ln 12); the rescale
        // to mean tau' is the identity when tau' equals the raw value.
        let pts = Tensor::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let c = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let raw = 1.0 / 12f64.ln();
        let phi = concentration(&pts, &c, &[0, 0], 10.0, raw).unwrap();
        assert!((phi[0] - raw).abs() < 1e-15);
    }

    #[test]
    fn empty_cluster_is_an_invariant_breach() {
        let pts = Tensor::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let c = Tensor::from_rows(&[vec![1.0], vec![7.0]]).unwrap();
        assert!(matches!(
            concentration(&pts, &c, &[0, 0], 10.0, 0.2),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn nearest_prefers_lowest_index_on_ties() {
        let protos = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let z = normalized(&[1.0, 1.0]);
        assert_eq!(nearest_prototype(&z, &protos), 0);
        assert_eq!(nearest_prototype(&[0.0, 1.0], &protos), 1);
    }
}
