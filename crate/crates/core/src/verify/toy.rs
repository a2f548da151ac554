//! Small random loss instances whose free variables live in one flat vector,
//! for finite-difference checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cluster::{BankParams, PrototypeBank};
use crate::encoder::{Domain, EmbeddingMatrix};
use crate::error::Result;
use crate::loss::{sample_negatives, BatchCoords, DomainBatch, LossContext, LossHooks, NegativeCounts, NegativeSet};
use crate::numcore::{Graph, Tensor, Var};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    /// Embedding width.
    pub d: usize,
    /// Samples per domain.
    pub n: usize,
    pub k_schedule: Vec<usize>,
    pub r: usize,
    pub r_prime: usize,
    pub classifier_hidden: usize,
    pub tau_prime: f64,
    pub alpha: f64,
    pub lambda: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            d: 8,
            n: 8,
            k_schedule: vec![4],
            r: 2,
            r_prime: 2,
            classifier_hidden: 4,
            tau_prime: 0.2,
            alpha: 10.0,
            lambda: 1.0 / 32.0,
        }
    }
}

/// Fixed (non-differentiated) data of one domain.
#[derive(Debug, Clone)]
pub struct ToyHalf {
    pub domain: Domain,
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub momentum: Tensor,
    pub negatives: Vec<NegativeSet>,
}

/// Graph handles of the free variables.
#[derive(Debug, Clone)]
pub struct ToyVars {
    /// Source online embeddings `[n, d]`.
    pub u: Var,
    /// Target online embeddings `[n, d]`.
    pub v: Var,
    pub inv_temperature: Var,
    pub classifier: Vec<Var>,
}

/// A random two-domain loss instance.
///
/// The flat point is laid out as: source embeddings, target embeddings,
/// `1/τ`, then every classifier tensor in order.
#[derive(Debug, Clone)]
pub struct ToyInstance {
    pub params: ToyParams,
    pub bank: PrototypeBank,
    pub source: ToyHalf,
    pub target: ToyHalf,
    pub classifier_shapes: Vec<Vec<usize>>,
    pub point: Tensor,
    pub hooks: LossHooks,
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

impl ToyInstance {
    pub fn random(params: &ToyParams, seed_value: u64) -> Result<Self> {
        let mut rng = seed::rng(seed_value, &[]);
        let (n, d) = (params.n, params.d);
        let mut halves = Vec::with_capacity(2);
        for (di, domain) in [Domain::Source, Domain::Target].into_iter().enumerate() {
            let ids: Vec<u64> = (0..n as u64).map(|i| i + (di * n) as u64).collect();
            let labels = (0..n).map(|_| rng.random_range(0..2)).collect();
            let momentum = Tensor::matrix(n, d, normal(&mut rng, n * d))?;
            halves.push((domain, ids, labels, momentum));
        }
        let emb = |h: &(Domain, Vec<u64>, Vec<usize>, Tensor)| EmbeddingMatrix::new(h.0, h.1.clone(), h.3.clone());
        let bank = PrototypeBank::build(
            &emb(&halves[0])?,
            &emb(&halves[1])?,
            BankParams {
                schedule: &params.k_schedule,
                alpha: params.alpha,
                tau_prime: params.tau_prime,
                seed: seed_value,
                epoch: 0,
            },
        )?;
        let counts = NegativeCounts {
            instance: params.r,
            prototype: params.r_prime,
        };
        let at = BatchCoords {
            seed: seed_value,
            epoch: 0,
            batch: 0,
        };
        let mut built = Vec::with_capacity(2);
        for (domain, ids, labels, momentum) in halves {
            let negatives = sample_negatives(&ids, domain, &bank, counts, at)?;
            built.push(ToyHalf {
                domain,
                ids,
                labels,
                momentum,
                negatives,
            });
        }
        let target = built.pop().expect("two halves");
        let source = built.pop().expect("two halves");
        let h = params.classifier_hidden;
        let classifier_shapes = vec![vec![d, h], vec![h], vec![h, 2], vec![2]];
        let mut flat = normal(&mut rng, 2 * n * d);
        flat.push(rng.random_range(0.5..5.0));
        for s in &classifier_shapes {
            let len: usize = s.iter().product();
            flat.extend(normal(&mut rng, len).into_iter().map(|x| 0.5 * x));
        }
        Ok(Self {
            params: params.clone(),
            bank,
            source,
            target,
            classifier_shapes,
            point: Tensor::vector(flat),
            hooks: LossHooks::default(),
        })
    }

    /// Slices the flat variable `x` into the free variables.
    pub fn unpack(&self, g: &mut Graph, x: Var) -> Result<ToyVars> {
        let total = self.point.data().len();
        let row = g.reshape(x, vec![1, total])?;
        let mut offset = 0;
        let mut take = |g: &mut Graph, shape: Vec<usize>| -> Result<Var> {
            let len: usize = shape.iter().product::<usize>().max(1);
            let cols = g.gather_cols(row, vec![(offset..offset + len).collect()])?;
            offset += len;
            g.reshape(cols, shape)
        };
        let (n, d) = (self.params.n, self.params.d);
        let u = take(g, vec![n, d])?;
        let v = take(g, vec![n, d])?;
        let inv_temperature = take(g, vec![])?;
        let classifier = self
            .classifier_shapes
            .iter()
            .map(|s| take(g, s.clone()))
            .collect::<Result<_>>()?;
        Ok(ToyVars {
            u,
            v,
            inv_temperature,
            classifier,
        })
    }

    pub fn batches(&self, vars: &ToyVars) -> (DomainBatch, DomainBatch) {
        let half = |h: &ToyHalf, online: Var| DomainBatch {
            domain: h.domain,
            ids: h.ids.clone(),
            labels: h.labels.clone(),
            online,
            momentum: h.momentum.clone(),
            negatives: h.negatives.clone(),
        };
        (half(&self.source, vars.u), half(&self.target, vars.v))
    }

    pub fn context<'a>(&'a self, vars: &'a ToyVars) -> LossContext<'a> {
        LossContext {
            bank: &self.bank,
            epoch: 0,
            inv_temperature: vars.inv_temperature,
            classifier: &vars.classifier,
            lambda: self.params.lambda,
            hooks: self.hooks,
        }
    }
}
