use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::seed;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `[k, d]`.
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub objective: f64,
    /// Objective after every assignment step, starting with the seeding.
    pub history: Vec<f64>,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point; ties go to the lowest index.
fn assign(points: &Tensor, centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .rows()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

fn kmeans_pp(points: &Tensor, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let (n, _) = points.rows_cols();
    let mut centroids = vec![points.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = points.rows().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (d, p) in d2.iter_mut().zip(points.rows()) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Cluster means; an empty cluster is re-seeded at the point currently
/// farthest from its own centroid.
fn update(points: &Tensor, assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let (_, d) = points.rows_cols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.rows().zip(assignments) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    if counts.contains(&0) {
        let mut spread: Vec<f64> = points
            .rows()
            .zip(assignments)
            .map(|(p, &a)| sq_dist(p, &sums[a]))
            .collect();
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let mut far = 0;
            for (i, &s) in spread.iter().enumerate() {
                if s > spread[far] {
                    far = i;
                }
            }
            sums[j] = points.row(far).to_vec();
            spread[far] = 0.0;
        }
    }
    sums
}

/// Lloyd's algorithm from a k-means++ seeding, run until the assignment
/// stops changing or [`MAX_ITERATIONS`] updates have been made.
pub fn kmeans(points: &Tensor, k: usize, seed: u64) -> Result<KMeans> {
    let (n, _) = points.rows_cols();
    if points.shape().len() != 2 {
        return Err(Error::shape("kmeans", format!("points {:?}", points.shape())));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("kmeans: k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "kmeans: {n} points cannot form {k} clusters"
        )));
    }
    if !points.is_finite() {
        return Err(Error::InvalidArgument("kmeans: non-finite point".into()));
    }
    let mut rng = seed::rng(seed, &[seed::KMEANS]);
    let mut centroids = kmeans_pp(points, k, &mut rng);
    let (mut assignments, dists) = assign(points, &centroids);
    let mut objective: f64 = dists.iter().sum();
    let mut history = vec![objective];
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let next = update(points, &assignments, k);
        let (next_assign, dists) = assign(points, &next);
        let next_obj: f64 = dists.iter().sum();
        if next_obj > objective + 1e-12 * objective.abs().max(1.0) {
            return Err(Error::Invariant(format!(
                "kmeans objective increased from {objective} to {next_obj}"
            )));
        }
        centroids = next;
        objective = next_obj;
        history.push(objective);
        let stable = next_assign == assignments;
        assignments = next_assign;
        if stable {
            converged = true;
            break;
        }
    }
    if !converged {
        // Leave centroids consistent with the final assignment.
        centroids = update(points, &assignments, k);
        let (a, dists) = assign(points, &centroids);
        assignments = a;
        objective = dists.iter().sum();
        log::warn!("kmeans: no fixpoint after {MAX_ITERATIONS} iterations (k = {k}, n = {n})");
    }
    let d = points.rows_cols().1;
    Ok(KMeans {
        centroids: Tensor::matrix(k, d, centroids.concat())?,
        assignments,
        objective,
        history,
        converged,
    })
}
