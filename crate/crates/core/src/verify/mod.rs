//! Self-checks run by `pctl verify`: gradient checks of every loss,
//! analytic limit cases, clustering oracles, concentration normalization,
//! moving-average decay and temperature handling.

pub mod toy;

use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;

use crate::cluster::{concentration, kmeans};
use crate::encoder::{ModelConfig, ModelState, INV_TEMPERATURE_INIT, INV_TEMPERATURE_MAX};
use crate::error::Result;
use crate::loss::{
    dual_proto_nce, info_nce_with, inter_domain_loss, intra_domain_loss, proto_term, total_loss,
};
use crate::numcore::{gradcheck, normalized, Graph, Tensor};
use crate::seed;
use toy::{ToyInstance, ToyParams};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-6;
pub const GRADCHECK_SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Negate the gradient through the instance logits, which every
    /// gradient check touching the instance term must catch.
    pub inject_sign_flip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_owned(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            writeln!(
                out,
                "{} {:<36} measured {:.3e}  tolerance {:.1e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance
            )
            .unwrap();
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        writeln!(out, "{} checks, {failed} failed", self.checks.len()).unwrap();
        out
    }
}

/// Which loss a gradient check exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Intra,
    Inter,
    Dual,
    Total,
}

/// Worst gradient-check error of a composite loss over the toy instance
/// built from `seed_value`.
pub fn gradcheck_loss(kind: LossKind, params: &ToyParams, seed_value: u64, reverse: bool) -> Result<f64> {
    let mut inst = ToyInstance::random(params, seed_value)?;
    inst.hooks.reverse_instance_grad = reverse;
    let point = inst.point.clone();
    gradcheck(
        |g, x| {
            let vars = inst.unpack(g, x)?;
            let (s, t) = inst.batches(&vars);
            let ctx = inst.context(&vars);
            match kind {
                LossKind::Intra => Ok(intra_domain_loss(g, &ctx, &s, &t)?.intra),
                LossKind::Inter => Ok(inter_domain_loss(g, &ctx, &s, &t)?.inter),
                LossKind::Dual => Ok(dual_proto_nce(g, &ctx, &s, &t)?.dual),
                LossKind::Total => Ok(total_loss(g, &ctx, &s, &t)?.total),
            }
        },
        &point,
        GRADCHECK_STEP,
    )
}

fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalized(&v)
}

/// Gradient check of the single-anchor instance term, differentiating the
/// raw anchor (normalized inside) and `1/τ`.
pub fn gradcheck_info_nce(d: usize, r: usize, seed_value: u64, reverse: bool) -> Result<f64> {
    let mut rng = seed::rng(seed_value, &[]);
    let positive = random_unit(&mut rng, d);
    let negatives: Vec<Vec<f64>> = (0..r).map(|_| random_unit(&mut rng, d)).collect();
    let mut point: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    point.push(rng.random_range(0.5..5.0));
    gradcheck(
        |g, x| {
            let row = g.reshape(x, vec![1, d + 1])?;
            let a = g.gather_cols(row, vec![(0..d).collect()])?;
            let a = g.l2_normalize_rows(a)?;
            let t = g.gather_cols(row, vec![vec![d]])?;
            let t = g.reshape(t, vec![])?;
            info_nce_with(g, a, &positive, &negatives, t, reverse)
        },
        &Tensor::vector(point),
        GRADCHECK_STEP,
    )
}

/// Gradient check of the single-anchor prototype term.
pub fn gradcheck_proto_term(d: usize, k: usize, r_prime: usize, seed_value: u64) -> Result<f64> {
    let mut rng = seed::rng(seed_value, &[]);
    let rows: Vec<Vec<f64>> = (0..k).map(|_| random_unit(&mut rng, d)).collect();
    let prototypes = Tensor::from_rows(&rows)?;
    let phi: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..0.5)).collect();
    let positive = rng.random_range(0..k);
    let negatives: Vec<usize> = (0..k).filter(|&j| j != positive).take(r_prime).collect();
    let point: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    gradcheck(
        |g, x| {
            let a = g.reshape(x, vec![1, d])?;
            let a = g.l2_normalize_rows(a)?;
            proto_term(g, a, &prototypes, &phi, positive, &negatives)
        },
        &Tensor::vector(point),
        GRADCHECK_STEP,
    )
}

/// Largest `|info_nce − ln(r + 1)|` when every key equals the positive.
pub fn uniform_info_nce_error(rs: &[usize]) -> Result<f64> {
    let d = 8;
    let mut worst: f64 = 0.0;
    for &r in rs {
        let key = normalized(&(1..=d).map(|i| i as f64).collect::<Vec<_>>());
        let anchor = normalized(&(1..=d).map(|i| (i as f64).sin()).collect::<Vec<_>>());
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(anchor));
        let t = g.constant(Tensor::scalar(3.0));
        let l = info_nce_with(&mut g, a, &key, &vec![key.clone(); r], t, false)?;
        worst = worst.max((g.value(l).item() - ((r + 1) as f64).ln()).abs());
    }
    Ok(worst)
}

/// `|proto_term − ln(r′ + 1)|` with equidistant prototypes and equal φ.
pub fn uniform_proto_error(r_prime: usize) -> Result<f64> {
    let k = r_prime + 1;
    let d = k + 1;
    // Anchor along the last axis, prototypes on distinct other axes: all
    // similarities are zero.
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut v = vec![0.0; d];
            v[j] = 1.0;
            v
        })
        .collect();
    let mut anchor = vec![0.0; d];
    anchor[d - 1] = 1.0;
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(anchor));
    let negatives: Vec<usize> = (1..k).collect();
    let l = proto_term(&mut g, a, &Tensor::from_rows(&rows)?, &vec![0.2; k], 0, &negatives)?;
    Ok((g.value(l).item() - (k as f64).ln()).abs())
}

/// Two mirror-image clusters: both concentrations must equal `τ′`.
pub fn symmetric_concentration_error() -> Result<f64> {
    let pts = Tensor::from_rows(&[vec![-3.0, 0.5], vec![-1.0, -0.5], vec![1.0, -0.5], vec![3.0, 0.5]])?;
    let centroids = Tensor::from_rows(&[vec![-2.0, 0.0], vec![2.0, 0.0]])?;
    let phi = concentration(&pts, &centroids, &[0, 0, 1, 1], 10.0, 0.2)?;
    Ok(phi.iter().map(|p| (p - 0.2).abs()).fold(0.0, f64::max))
}

/// `|objective − 1|` for `{0, 1, 9, 10}` with `k = 2`, whose optimum is
/// `{0, 1} | {9, 10}`.
pub fn kmeans_small_oracle_error() -> Result<f64> {
    let pts = Tensor::matrix(4, 1, vec![0.0, 1.0, 9.0, 10.0])?;
    let mut worst: f64 = 0.0;
    for s in 0..5 {
        let km = kmeans(&pts, 2, s)?;
        let same = km.assignments[0] == km.assignments[1] && km.assignments[2] == km.assignments[3];
        let err = if same && km.assignments[0] != km.assignments[2] {
            (km.objective - 1.0).abs()
        } else {
            f64::INFINITY
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Largest objective increase between consecutive Lloyd iterations over
/// `instances` random problems.
pub fn kmeans_monotonicity(instances: usize) -> Result<f64> {
    let mut rng = seed::rng(99, &[]);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let n = rng.random_range(10..60);
        let d = rng.random_range(1..5);
        let k = rng.random_range(1..8).min(n);
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let km = kmeans(&Tensor::matrix(n, d, data)?, k, i as u64)?;
        for w in km.history.windows(2) {
            worst = worst.max(w[1] - w[0]);
        }
    }
    Ok(worst)
}

/// Largest `|mean(φ) − τ′|` over random clusterings.
pub fn concentration_normalization_error(instances: usize) -> Result<f64> {
    let mut rng = seed::rng(7, &[]);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let n = rng.random_range(20..80);
        let k = rng.random_range(2..10);
        let data: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pts = Tensor::matrix(n, 3, data)?;
        let km = kmeans(&pts, k, i as u64)?;
        let tau = rng.random_range(0.05..1.0);
        let phi = concentration(&pts, &km.centroids, &km.assignments, 10.0, tau)?;
        let mean = phi.iter().sum::<f64>() / k as f64;
        worst = worst.max((mean - tau).abs());
    }
    Ok(worst)
}

/// With the encoder frozen, `‖θ′_t − θ‖ = γ^t ‖θ′_0 − θ‖` per tensor.
pub fn ema_decay_error(gamma: f64, steps: usize) -> Result<f64> {
    let cfg = ModelConfig {
        d_inst: 3,
        d_vis: 3,
        hidden: 5,
        embed_dim: 4,
        classifier_hidden: 3,
        gamma,
        ..ModelConfig::default()
    };
    let mut m = ModelState::new(&cfg, 5)?;
    let mut rng = seed::rng(5, &[1]);
    for t in m.momentum_params_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-1.0..1.0));
    }
    let dist = |m: &ModelState| -> Vec<f64> {
        m.momentum_params()
            .iter()
            .zip(m.encoder_params())
            .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .collect()
    };
    let d0 = dist(&m);
    let mut worst: f64 = 0.0;
    for t in 1..=steps {
        m.momentum_update()?;
        for (now, start) in dist(&m).iter().zip(&d0) {
            worst = worst.max((now - gamma.powi(t as i32) * start).abs());
        }
    }
    Ok(worst)
}

/// `|1/τ₀ − 0.07| + |clamp(10⁶) − 100|` on a fresh model.
pub fn temperature_error() -> Result<f64> {
    let mut m = ModelState::new(&ModelConfig::default(), 0)?;
    let init = (m.inv_temperature() - INV_TEMPERATURE_INIT).abs();
    m.set_inv_temperature(1e6);
    let clamped = m.clamp_temperature();
    Ok(init + (clamped - INV_TEMPERATURE_MAX).abs())
}

/// Runs every check. Numerical failures are reported as failed checks, not
/// errors.
pub fn run_checks(opts: VerifyOptions) -> VerifyReport {
    let flip = opts.inject_sign_flip;
    let params = ToyParams::default();
    let worst_over = |f: &dyn Fn(u64) -> Result<f64>| -> f64 {
        GRADCHECK_SEEDS
            .iter()
            .map(|&s| f(s).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    };
    let or_inf = |r: Result<f64>| r.unwrap_or(f64::INFINITY);
    let mut checks = vec![
        Check::new(
            "gradcheck info_nce",
            worst_over(&|s| gradcheck_info_nce(params.d, params.r, s, flip)),
            GRADCHECK_TOLERANCE,
        ),
        Check::new(
            "gradcheck proto_term",
            worst_over(&|s| gradcheck_proto_term(params.d, 4, params.r_prime, s)),
            GRADCHECK_TOLERANCE,
        ),
    ];
    for (name, kind) in [
        ("gradcheck intra_domain_loss", LossKind::Intra),
        ("gradcheck inter_domain_loss", LossKind::Inter),
        ("gradcheck dual_proto_nce", LossKind::Dual),
        ("gradcheck total_loss", LossKind::Total),
    ] {
        checks.push(Check::new(
            name,
            worst_over(&|s| gradcheck_loss(kind, &params, s, flip)),
            GRADCHECK_TOLERANCE,
        ));
    }
    checks.extend([
        Check::new("uniform info_nce = ln(r+1)", or_inf(uniform_info_nce_error(&[1, 2, 32])), 1e-9),
        Check::new("uniform proto_term = ln(r'+1)", or_inf(uniform_proto_error(32)), 1e-9),
        Check::new("symmetric concentration = tau'", or_inf(symmetric_concentration_error()), 1e-9),
        Check::new("kmeans {0,1,9,10} oracle", or_inf(kmeans_small_oracle_error()), 1e-12),
        Check::new("kmeans objective monotone", or_inf(kmeans_monotonicity(100)), 0.0),
        Check::new("concentration mean = tau'", or_inf(concentration_normalization_error(50)), 1e-9),
        Check::new("momentum decay gamma^t", or_inf(ema_decay_error(0.9, 20)), 1e-9),
        Check::new("temperature init and clamp", or_inf(temperature_error()), 0.0),
    ]);
    VerifyReport { checks }
}
