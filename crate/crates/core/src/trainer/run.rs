use std::time::Instant;

use super::eval::evaluate;
use super::{EpochMetrics, Mode, RunMetrics, TrainConfig};
use crate::cluster::{BankParams, PrototypeBank};
use crate::data::{batch_iter, domain_batches, DatasetFile};
use crate::encoder::{encoder_graph, Branch, Domain, EmbeddingMatrix, ModelState, OnlineVars, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::loss::{
    cross_entropy_sum, sample_negatives, total_loss, BatchCoords, DomainBatch, LossBreakdown, LossContext,
};
use crate::numcore::{Graph, SgdMomentum, Tensor, Var};

/// Concentration means further than this from `τ′` abort the run.
const CONCENTRATION_TOLERANCE: f64 = 1e-9;

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State at the epoch with the lowest validation cross-entropy.
    pub best: ModelState,
    /// State after the final epoch.
    pub last: ModelState,
    pub metrics: RunMetrics,
}

/// Called after every epoch with its metrics, the current state and whether
/// that state is the new best. An error stops the run.
pub type EpochCallback<'a> = dyn FnMut(&EpochMetrics, &ModelState, bool) -> Result<()> + 'a;

pub fn train(cfg: &TrainConfig, data: &DatasetFile) -> Result<TrainOutcome> {
    train_with(cfg, data, &mut |_, _, _| Ok(()))
}

/// Runs the configured mode, reporting each epoch to `on_epoch`.
pub fn train_with(cfg: &TrainConfig, data: &DatasetFile, on_epoch: &mut EpochCallback<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut run = Run::new(cfg, data, on_epoch)?;
    let result = run_mode(&mut run, cfg);
    if let Err(e) = result {
        // A non-finite value anywhere in an epoch aborts the run at that point.
        return Err(match e {
            Error::NonFinite { op } => Error::Aborted {
                epoch: run.at.0 + 1,
                batch: run.at.1,
                reason: format!("non-finite value produced by `{op}`"),
            },
            Error::NonFiniteGradient { index, which } => Error::Aborted {
                epoch: run.at.0 + 1,
                batch: run.at.1,
                reason: format!("non-finite {which} gradient at coordinate {index}"),
            },
            e => e,
        });
    }
    run.finish()
}

fn run_mode(run: &mut Run<'_, '_>, cfg: &TrainConfig) -> Result<()> {
    match cfg.train.mode {
        Mode::Pctl => {
            for e in 0..cfg.train.epochs {
                run.pctl_epoch(e)?;
            }
        }
        Mode::TargetOnly => {
            for e in 0..cfg.train.epochs {
                run.ce_epoch(Domain::Target, e, true)?;
            }
        }
        Mode::FineTune => {
            for e in 0..cfg.train.pretrain_epochs {
                run.ce_epoch(Domain::Source, e, false)?;
            }
            run.opt = optimizer(cfg)?;
            for e in 0..cfg.train.epochs {
                run.ce_epoch(Domain::Target, e, true)?;
            }
        }
    }
    Ok(())
}

pub fn train_pctl(cfg: &TrainConfig, data: &DatasetFile) -> Result<TrainOutcome> {
    train(&with_mode(cfg, Mode::Pctl), data)
}

pub fn train_target_only(cfg: &TrainConfig, data: &DatasetFile) -> Result<TrainOutcome> {
    train(&with_mode(cfg, Mode::TargetOnly), data)
}

pub fn train_fine_tune(cfg: &TrainConfig, data: &DatasetFile) -> Result<TrainOutcome> {
    train(&with_mode(cfg, Mode::FineTune), data)
}

fn with_mode(cfg: &TrainConfig, mode: Mode) -> TrainConfig {
    let mut c = cfg.clone();
    c.train.mode = mode;
    c
}

fn optimizer(cfg: &TrainConfig) -> Result<SgdMomentum> {
    SgdMomentum::new(cfg.optim.momentum, vec![cfg.optim.lr, cfg.optim.body_lr])
}

fn distance(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn ema_gaps(model: &ModelState) -> Vec<f64> {
    model
        .momentum_params()
        .iter()
        .zip(model.encoder_params())
        .map(|(m, e)| distance(m, e))
        .collect()
}

struct Run<'a, 'cb> {
    cfg: &'a TrainConfig,
    data: &'a DatasetFile,
    model: ModelState,
    opt: SgdMomentum,
    metrics: RunMetrics,
    best: Option<(f64, ModelState)>,
    /// (epoch, batch) being processed.
    at: (usize, usize),
    on_epoch: &'cb mut EpochCallback<'cb>,
}

/// Per-epoch running sums.
#[derive(Default)]
struct Tally {
    sum: [f64; 15],
    batches: usize,
    source_batches: usize,
    target_batches: usize,
}

impl Tally {
    fn add(&mut self, b: &LossBreakdown) {
        for (s, v) in self.sum.iter_mut().zip(b.values()) {
            *s += v;
        }
        self.batches += 1;
    }

    fn mean(&self, lambda: f64) -> LossBreakdown {
        if self.batches == 0 {
            return LossBreakdown {
                lambda,
                ..LossBreakdown::default()
            };
        }
        let n = self.batches as f64;
        let m = self.sum.map(|s| s / n);
        LossBreakdown {
            info_nce_target: m[0],
            info_nce_source: m[1],
            proto_target: m[2],
            proto_source: m[3],
            l_target: m[4],
            l_source: m[5],
            l_intra: m[6],
            l_s2t: m[7],
            l_t2s: m[8],
            l_inter: m[9],
            l_dual: m[10],
            l_t: m[11],
            l_s: m[12],
            total: m[13],
            lambda,
        }
    }
}

impl<'a, 'cb> Run<'a, 'cb> {
    fn new(cfg: &'a TrainConfig, data: &'a DatasetFile, on_epoch: &'cb mut EpochCallback<'cb>) -> Result<Self> {
        let source_needed = match cfg.train.mode {
            Mode::Pctl => true,
            Mode::TargetOnly => false,
            Mode::FineTune => cfg.train.pretrain_epochs > 0,
        };
        let mut needed = vec![Domain::Target];
        if source_needed {
            needed.push(Domain::Source);
        }
        for domain in needed {
            if data.split(domain, Split::Train).is_empty() {
                return Err(Error::InvalidArgument(format!("{} train split is empty", domain.name())));
            }
        }
        if data.split(Domain::Target, Split::Val).is_empty() {
            return Err(Error::InvalidArgument("target val split is empty".into()));
        }
        let h = data.header();
        if (h.d_inst, h.d_vis) != (cfg.model.d_inst, cfg.model.d_vis) {
            return Err(Error::Config(format!(
                "model widths (d_inst {}, d_vis {}) do not match the dataset ({}, {})",
                cfg.model.d_inst, cfg.model.d_vis, h.d_inst, h.d_vis
            )));
        }
        Ok(Self {
            cfg,
            data,
            model: ModelState::new(&cfg.model, cfg.train.seed)?,
            opt: optimizer(cfg)?,
            metrics: RunMetrics::default(),
            best: None,
            at: (0, 0),
            on_epoch,
        })
    }

    fn momentum_embeddings(&self, domain: Domain) -> Result<EmbeddingMatrix> {
        let rs = self.data.split(domain, Split::Train);
        let ids = rs.iter().map(|r| r.id).collect();
        EmbeddingMatrix::new(domain, ids, self.model.encode_batch(&rs, Branch::Momentum)?)
    }

    fn online(&self, g: &mut Graph, vars: &OnlineVars, samples: &[&SampleRecord]) -> Result<Var> {
        let x = g.constant(self.model.input_matrix(samples)?);
        encoder_graph(g, &vars.encoder, x)
    }

    /// Backward, optimizer step, temperature clamp and momentum update.
    fn step(&mut self, g: &mut Graph, vars: &OnlineVars, loss: Var, epoch: usize, batch: usize) -> Result<()> {
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Aborted {
                epoch: epoch + 1,
                batch,
                reason: format!("non-finite loss {value}"),
            });
        }
        g.backward(loss)?;
        let grads = self.model.collect_grads(g, vars);
        let groups: Vec<usize> = self.model.param_groups().into_iter().map(|p| p as usize).collect();
        let check_ema = cfg!(debug_assertions);
        let before = if check_ema {
            Some((ema_gaps(&self.model), self.model.encoder_params().to_vec()))
        } else {
            None
        };
        self.opt
            .step(&mut self.model.trainable_mut(), &groups, &grads)
            .map_err(|e| Error::Aborted {
                epoch: epoch + 1,
                batch,
                reason: e.to_string(),
            })?;
        self.model.clamp_temperature();
        self.model.momentum_update()?;
        if let Some((gaps, old)) = before {
            let gamma = self.model.gamma();
            for ((gap, now), (prev, cur)) in gaps.iter().zip(ema_gaps(&self.model)).zip(old.iter().zip(self.model.encoder_params())) {
                let bound = gamma * gap + distance(prev, cur);
                debug_assert!(now <= bound * (1.0 + 1e-9) + 1e-12, "EMA gap {now} exceeds bound {bound}");
            }
        }
        Ok(())
    }

    fn pctl_epoch(&mut self, epoch: usize) -> Result<()> {
        let started = Instant::now();
        let cfg = self.cfg;
        let seed = cfg.train.seed;
        self.at = (epoch, 0);
        let src = self.momentum_embeddings(Domain::Source)?;
        let tgt = self.momentum_embeddings(Domain::Target)?;
        let bank = PrototypeBank::build(
            &src,
            &tgt,
            BankParams {
                schedule: &cfg.cluster.k_schedule,
                alpha: cfg.cluster.alpha,
                tau_prime: cfg.cluster.tau_prime,
                seed,
                epoch,
            },
        )?;
        let conc_err = bank.concentration_mean_error();
        if !(conc_err <= CONCENTRATION_TOLERANCE) {
            return Err(Error::Invariant(format!(
                "concentration mean is {conc_err} away from tau' in epoch {}",
                epoch + 1
            )));
        }
        let counts = cfg.negative_counts();
        let mut tally = Tally::default();
        for pb in batch_iter(self.data, cfg.train.batch_size, epoch, seed)? {
            self.at = (epoch, pb.index);
            let at = BatchCoords {
                seed,
                epoch,
                batch: pb.index,
            };
            let mut g = Graph::new();
            let vars = self.model.register(&mut g);
            let mut halves = Vec::with_capacity(2);
            for (domain, samples) in [(Domain::Source, &pb.source), (Domain::Target, &pb.target)] {
                let ids: Vec<u64> = samples.iter().map(|r| r.id).collect();
                halves.push(DomainBatch {
                    domain,
                    labels: samples.iter().map(|r| r.label()).collect(),
                    online: self.online(&mut g, &vars, samples)?,
                    momentum: self.model.encode_batch(samples, Branch::Momentum)?,
                    negatives: sample_negatives(&ids, domain, &bank, counts, at)?,
                    ids,
                });
            }
            let ctx = LossContext {
                bank: &bank,
                epoch,
                inv_temperature: vars.inv_temperature,
                classifier: &vars.classifier,
                lambda: cfg.loss.lambda,
                hooks: cfg.hooks,
            };
            let out = total_loss(&mut g, &ctx, &halves[0], &halves[1])?;
            self.step(&mut g, &vars, out.total, epoch, pb.index)?;
            tally.add(&out.breakdown);
            tally.source_batches += 1;
            tally.target_batches += 1;
        }
        self.finish_epoch("joint", tally, conc_err, started, true)
    }

    /// Cross-entropy-only epoch on one domain's train split.
    fn ce_epoch(&mut self, domain: Domain, epoch: usize, eligible: bool) -> Result<()> {
        let started = Instant::now();
        let cfg = self.cfg;
        let mut tally = Tally::default();
        for (index, samples) in domain_batches(self.data, domain, cfg.train.batch_size, epoch, cfg.train.seed)?
            .into_iter()
            .enumerate()
        {
            self.at = (epoch, index);
            let mut g = Graph::new();
            let vars = self.model.register(&mut g);
            let rows = self.online(&mut g, &vars, &samples)?;
            let labels: Vec<usize> = samples.iter().map(|r| r.label()).collect();
            let sum = cross_entropy_sum(&mut g, &vars.classifier, rows, &labels)?;
            let loss = g.scale(sum, 1.0 / samples.len() as f64)?;
            self.step(&mut g, &vars, loss, epoch, index)?;
            let v = g.value(loss).item();
            let b = match domain {
                Domain::Target => LossBreakdown {
                    l_t: v,
                    total: v,
                    ..LossBreakdown::default()
                },
                Domain::Source => LossBreakdown {
                    l_s: v,
                    total: v,
                    ..LossBreakdown::default()
                },
            };
            tally.add(&b);
            match domain {
                Domain::Source => tally.source_batches += 1,
                Domain::Target => tally.target_batches += 1,
            }
        }
        let phase = match domain {
            Domain::Source => "source",
            Domain::Target => "target",
        };
        self.finish_epoch(phase, tally, 0.0, started, eligible)
    }

    fn finish_epoch(&mut self, phase: &'static str, tally: Tally, conc_err: f64, started: Instant, eligible: bool) -> Result<()> {
        let val = evaluate(&self.model, self.data, Domain::Target, Split::Val)?;
        let test_acc = if self.data.split(Domain::Target, Split::Test).is_empty() {
            f64::NAN
        } else {
            evaluate(&self.model, self.data, Domain::Target, Split::Test)?.accuracy
        };
        let lambda = if phase == "joint" { self.cfg.loss.lambda } else { 0.0 };
        let row = EpochMetrics {
            epoch: self.metrics.rows.len() + 1,
            phase,
            source_batches: tally.source_batches,
            target_batches: tally.target_batches,
            loss: tally.mean(lambda),
            val_ce: val.ce,
            val_acc: val.accuracy,
            test_acc,
            inv_temperature: self.model.inv_temperature(),
            concentration_error: conc_err,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} ({phase}): loss {:.5}, val CE {:.5}, val acc {:.4}, test acc {:.4}",
            row.epoch,
            row.loss.total,
            row.val_ce,
            row.val_acc,
            row.test_acc
        );
        let improved = eligible && self.best.as_ref().is_none_or(|(ce, _)| val.ce < *ce);
        if improved {
            self.best = Some((val.ce, self.model.clone()));
            self.metrics.best_epoch = Some(row.epoch);
        }
        (self.on_epoch)(&row, &self.model, improved)?;
        self.metrics.rows.push(row);
        Ok(())
    }

    fn finish(self) -> Result<TrainOutcome> {
        let best = match self.best {
            Some((_, m)) => m,
            None => self.model.clone(),
        };
        Ok(TrainOutcome {
            best,
            last: self.model,
            metrics: self.metrics,
        })
    }
}
