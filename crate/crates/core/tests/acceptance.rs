//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pctl::cluster::{concentration, kmeans, BankParams, PrototypeBank};
use pctl::data::{generate_synthetic, GeneratorConfig, SplitCounts};
use pctl::encoder::{Domain, EmbeddingMatrix, ModelConfig, ModelState, Split};
use pctl::loss::{dual_proto_nce, info_nce, inter_domain_loss, intra_domain_loss, proto_term, total_loss};
use pctl::numcore::{Graph, Tensor, Var};
use pctl::trainer::{
    default_conditions, evaluate, mean_std, run_ablation, train, train_pctl, AblationCondition, EpochMetrics, Mode,
    OptimConfig, TrainConfig,
};
use pctl::verify::toy::{ToyInstance, ToyParams};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Largest `|analytic − numeric| / max(1, |analytic|, |numeric|)` using
/// central differences with step `1e-6`.
fn fd_error(point: &Tensor, f: &dyn Fn(&mut Graph, Var) -> Var) -> f64 {
    let value = |p: &Tensor| {
        let mut g = Graph::new();
        let x = g.param(p.clone());
        let l = f(&mut g, x);
        g.value(l).item()
    };
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let l = f(&mut g, x);
    g.backward(l).unwrap();
    let analytic = g.grad(x).unwrap().to_vec();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let numeric = (value(&plus) - value(&minus)) / (2.0 * h);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0));
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let params = ToyParams::default();
    assert_eq!((params.d, params.n, params.k_schedule.as_slice(), params.r, params.r_prime), (8, 8, &[4][..], 2, 2));
    let mut worst = [0.0f64; 6];
    for seed in 11..16u64 {
        let mut rng = pctl::seed::rng(seed, &[7]);
        let d = params.d;

        // Single-anchor instance term over (raw anchor, 1/τ).
        let positive = unit(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let negatives: Vec<Vec<f64>> = (0..params.r)
            .map(|_| unit(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let mut p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        p.push(rng.random_range(0.5..5.0));
        let e = fd_error(&Tensor::vector(p), &|g, x| {
            let row = g.reshape(x, vec![1, d + 1]).unwrap();
            let a = g.gather_cols(row, vec![(0..d).collect()]).unwrap();
            let a = g.l2_normalize_rows(a).unwrap();
            let t = g.gather_cols(row, vec![vec![d]]).unwrap();
            let t = g.reshape(t, vec![]).unwrap();
            info_nce(g, a, &positive, &negatives, t).unwrap()
        });
        worst[0] = worst[0].max(e);

        // Single-anchor prototype term.
        let k = params.k_schedule[0];
        let protos: Vec<Vec<f64>> = (0..k)
            .map(|_| unit(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let protos = Tensor::from_rows(&protos).unwrap();
        let phi: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..0.5)).collect();
        let p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e = fd_error(&Tensor::vector(p), &|g, x| {
            let a = g.reshape(x, vec![1, d]).unwrap();
            let a = g.l2_normalize_rows(a).unwrap();
            proto_term(g, a, &protos, &phi, 1, &[0, 3]).unwrap()
        });
        worst[1] = worst[1].max(e);

        let toy = ToyInstance::random(&params, seed).map_err(|e| e.to_string())?;
        for (slot, which) in (2..6).zip(0..4) {
            let e = fd_error(&toy.point, &|g, x| {
                let vars = toy.unpack(g, x).unwrap();
                let (s, t) = toy.batches(&vars);
                let ctx = toy.context(&vars);
                match which {
                    0 => intra_domain_loss(g, &ctx, &s, &t).unwrap().intra,
                    1 => inter_domain_loss(g, &ctx, &s, &t).unwrap().inter,
                    2 => dual_proto_nce(g, &ctx, &s, &t).unwrap().dual,
                    _ => total_loss(g, &ctx, &s, &t).unwrap().total,
                }
            });
            worst[slot] = worst[slot].max(e);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let names = ["info_nce", "proto_term", "intra", "inter", "dual", "total"];
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        worst.iter().all(|&w| w < 1e-4) && secs < 60.0,
        format!("max relative error {detail} (< 1e-4); {secs:.1} s (< 60 s)"),
    )
}

fn limit_cases() -> Outcome {
    let mut worst: f64 = 0.0;
    let anchor = unit(&[0.3, -1.0, 0.2, 0.7, 0.0, 1.1]);
    let key = unit(&[1.0, 2.0, -0.5, 0.1, 0.4, -0.3]);
    for r in [1usize, 2, 32] {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(anchor.clone()));
        let t = g.constant(Tensor::scalar(2.5));
        let l = info_nce(&mut g, a, &key, &vec![key.clone(); r], t).map_err(|e| e.to_string())?;
        worst = worst.max((g.value(l).item() - ((r + 1) as f64).ln()).abs());
    }
    let info = worst;

    // Every prototype at the same angle from the anchor, equal concentrations.
    let mut proto = 0.0f64;
    for r_prime in [1usize, 2, 32] {
        let k = r_prime + 1;
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                let mut v = vec![0.0; k + 1];
                v[j] = 0.6;
                v[k] = 0.8;
                v
            })
            .collect();
        let mut a = vec![0.0; k + 1];
        a[k] = 1.0;
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(a));
        let negs: Vec<usize> = (1..k).collect();
        let l = proto_term(&mut g, a, &Tensor::from_rows(&rows).unwrap(), &vec![0.3; k], 0, &negs)
            .map_err(|e| e.to_string())?;
        proto = proto.max((g.value(l).item() - (k as f64).ln()).abs());
    }

    // Two mirror-image clusters.
    let pts = Tensor::from_rows(&[vec![-2.0, 1.0], vec![-4.0, -1.0], vec![2.0, 1.0], vec![4.0, -1.0]]).unwrap();
    let cents = Tensor::from_rows(&[vec![-3.0, 0.0], vec![3.0, 0.0]]).unwrap();
    let phi = concentration(&pts, &cents, &[0, 0, 1, 1], 10.0, 0.2).map_err(|e| e.to_string())?;
    let sym = phi.iter().map(|p| (p - 0.2).abs()).fold(0.0, f64::max);
    check(
        info <= 1e-9 && proto <= 1e-9 && sym <= 1e-9,
        format!("|info_nce - ln(r+1)| {info:.1e}, |proto_term - ln(r'+1)| {proto:.1e}, |phi - 0.2| {sym:.1e} (<= 1e-9)"),
    )
}

fn loss_algebra() -> Outcome {
    let mut checked = 0;
    for seed in 0..50u64 {
        let params = ToyParams {
            k_schedule: if seed % 2 == 0 { vec![4] } else { vec![3, 4] },
            lambda: [1.0 / 32.0, 0.3, 1.7][seed as usize % 3],
            ..ToyParams::default()
        };
        let toy = ToyInstance::random(&params, seed).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let x = g.param(toy.point.clone());
        let vars = toy.unpack(&mut g, x).map_err(|e| e.to_string())?;
        let (s, t) = toy.batches(&vars);
        let b = total_loss(&mut g, &toy.context(&vars), &s, &t).map_err(|e| e.to_string())?.breakdown;
        let exact = b.l_intra == b.l_target + b.l_source
            && b.l_inter == b.l_s2t + b.l_t2s
            && b.l_dual == b.l_intra + b.l_inter
            && b.total == b.lambda * b.l_dual + b.l_t + b.l_s;
        if !exact {
            return Err(format!("seed {seed}: recomputed sums differ from the breakdown: {b:?}"));
        }
        checked += 1;
    }
    Ok(format!("{checked} instances, all four identities exact (0 ulp)"))
}

fn oracle_equivalence() -> Outcome {
    let params = ToyParams {
        d: 4,
        n: 3,
        k_schedule: vec![2],
        r: 1,
        r_prime: 1,
        classifier_hidden: 3,
        ..ToyParams::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let toy = ToyInstance::random(&params, seed).map_err(|e| e.to_string())?;
        let want = common::oracle_losses(&common::oracle_input(&toy)).values();
        let mut g = Graph::new();
        let x = g.param(toy.point.clone());
        let vars = toy.unpack(&mut g, x).map_err(|e| e.to_string())?;
        let (s, t) = toy.batches(&vars);
        let got = total_loss(&mut g, &toy.context(&vars), &s, &t).map_err(|e| e.to_string())?.breakdown.values();
        for (a, b) in got.iter().zip(want) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        worst <= 1e-12,
        format!("6 samples, M = 1, k = 2, r = r' = 1, 10 instances, 14 values each: max |diff| {worst:.1e} (<= 1e-12)"),
    )
}

/// Concentration errors recorded for every bank built in these runs.
fn bank_errors(rows: &[EpochMetrics]) -> Vec<f64> {
    rows.iter().filter(|r| r.phase == "joint").map(|r| r.concentration_error).collect()
}

fn clustering(run_banks: &[f64]) -> Outcome {
    let mut rng = pctl::seed::rng(2024, &[]);
    let mut increases = 0;
    for i in 0..100u64 {
        let n = rng.random_range(5..60);
        let d = rng.random_range(1..6);
        let k = rng.random_range(1..=n.min(8));
        let data = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let km = kmeans(&Tensor::matrix(n, d, data).unwrap(), k, i).map_err(|e| e.to_string())?;
        increases += km.history.windows(2).filter(|w| w[1] > w[0]).count();
    }

    let pts = vec![vec![0.0], vec![1.0], vec![9.0], vec![10.0]];
    let (best, obj) = common::brute_force_kmeans(&pts, 2);
    let km = kmeans(&Tensor::from_rows(&pts).unwrap(), 2, 0).map_err(|e| e.to_string())?;
    let oracle_ok = common::same_partition(&km.assignments, &best) && (km.objective - obj).abs() < 1e-12;

    // Banks over random embeddings, several schedules.
    let mut worst: f64 = 0.0;
    let mut banks = 0;
    for i in 0..20u64 {
        let n = 40;
        let emb = |dom: Domain, base: u64, rng: &mut rand_chacha::ChaCha8Rng| {
            let data = (0..n * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
            EmbeddingMatrix::new(dom, (base..base + n as u64).collect(), Tensor::matrix(n, 5, data).unwrap()).unwrap()
        };
        let s = emb(Domain::Source, 0, &mut rng);
        let t = emb(Domain::Target, 100, &mut rng);
        let schedule = [2 + i as usize % 5, 10, 33];
        let bank = PrototypeBank::build(
            &s,
            &t,
            BankParams {
                schedule: &schedule,
                alpha: 10.0,
                tau_prime: 0.2,
                seed: i,
                epoch: 0,
            },
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(bank.concentration_mean_error());
        banks += 1;
    }
    let from_runs = run_banks.iter().copied().fold(0.0, f64::max);
    check(
        increases == 0 && oracle_ok && worst <= 1e-9 && from_runs <= 1e-9 && !run_banks.is_empty(),
        format!(
            "100 k-means instances, {increases} objective increases; {{0,1,9,10}} k=2 oracle {}; \
             |mean(phi) - tau'| {worst:.1e} over {banks} standalone banks and {from_runs:.1e} over {} training banks",
            if oracle_ok { "reproduced" } else { "NOT reproduced" },
            run_banks.len()
        ),
    )
}

fn ema() -> Outcome {
    let cfg = ModelConfig {
        d_inst: 4,
        d_vis: 4,
        hidden: 6,
        embed_dim: 5,
        classifier_hidden: 3,
        ..ModelConfig::default()
    };
    let mut worst: f64 = 0.0;
    for gamma in [0.999, 0.9, 0.5] {
        let mut m = ModelState::new(&ModelConfig { gamma, ..cfg.clone() }, 3).map_err(|e| e.to_string())?;
        let mut rng = pctl::seed::rng(3, &[]);
        for t in m.momentum_params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-2.0..2.0));
        }
        let frozen: Vec<Tensor> = m.encoder_params().to_vec();
        let gaps = |m: &ModelState| -> Vec<f64> {
            m.momentum_params()
                .iter()
                .zip(&frozen)
                .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
                .collect()
        };
        let start = gaps(&m);
        for t in 1..=20 {
            m.momentum_update().map_err(|e| e.to_string())?;
            if m.encoder_params() != frozen.as_slice() {
                return Err("encoder changed during the momentum update".into());
            }
            for (now, s0) in gaps(&m).iter().zip(&start) {
                worst = worst.max((now - gamma.powi(t) * s0).abs());
            }
        }
    }
    check(worst <= 1e-9, format!("gamma in {{0.999, 0.9, 0.5}}, t <= 20: max per-tensor error {worst:.1e} (<= 1e-9)"))
}

fn temperature() -> Outcome {
    let mut m = ModelState::new(&ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let fresh = m.inv_temperature();
    m.set_inv_temperature(1e6);
    let clamped = m.clamp_temperature();
    check(
        fresh == 0.07 && clamped == 100.0 && m.inv_temperature() == 100.0,
        format!("fresh 1/tau = {fresh}, after setting 1e6 and clamping {clamped}"),
    )
}

fn determinism(banks: &mut Vec<f64>) -> Outcome {
    let gen = GeneratorConfig {
        source: SplitCounts {
            train: 1536,
            ..GeneratorConfig::default().source
        },
        target: SplitCounts {
            train: 512,
            ..GeneratorConfig::default().target
        },
        ..GeneratorConfig::default()
    };
    let data = generate_synthetic(&gen).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::default();
    cfg.model.embed_dim = 16;
    cfg.train.epochs = 5;
    let started = Instant::now();
    let a = train_pctl(&cfg, &data).map_err(|e| e.to_string())?;
    let b = train_pctl(&cfg, &data).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    banks.extend(bank_errors(&a.metrics.rows));
    banks.extend(bank_errors(&b.metrics.rows));
    let (ca, cb) = (a.metrics.to_csv(), b.metrics.to_csv());
    check(
        ca.as_bytes() == cb.as_bytes() && secs < 300.0,
        format!("d = 16, 512 target + 1536 source, 5 epochs: CSVs {} ({} bytes); two runs in {secs:.1} s (< 300 s)",
            if ca == cb { "byte-identical" } else { "DIFFER" }, ca.len()),
    )
}

fn directional(banks: &mut Vec<f64>) -> Outcome {
    let started = Instant::now();
    let data = generate_synthetic(&GeneratorConfig::default()).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for mode in [Mode::TargetOnly, Mode::FineTune, Mode::Pctl] {
        let mut test = Vec::new();
        let mut val = Vec::new();
        for seed in 0..5 {
            let mut cfg = TrainConfig::default();
            cfg.optim = OptimConfig::desk_scale();
            cfg.train.mode = mode;
            cfg.train.seed = seed;
            let out = train(&cfg, &data).map_err(|e| e.to_string())?;
            banks.extend(bank_errors(&out.metrics.rows));
            test.push(evaluate(&out.best, &data, Domain::Target, Split::Test).map_err(|e| e.to_string())?.accuracy);
            val.push(evaluate(&out.best, &data, Domain::Target, Split::Val).map_err(|e| e.to_string())?.accuracy);
        }
        summary.push((mode, 100.0 * mean_std(&test).0, 100.0 * mean_std(&val).0));
    }
    let secs = started.elapsed().as_secs_f64();
    let [(_, to, to_val), (_, ft, _), (_, pctl, _)] = summary[..] else { unreachable!() };
    check(
        (70.0..=85.0).contains(&to_val) && pctl >= to + 1.0 && pctl >= ft && secs < 1800.0,
        format!(
            "5 seeds, mean target test accuracy: PCTL {pctl:.2}, target-only {to:.2} (val {to_val:.2}), \
             fine-tune {ft:.2}; need PCTL >= target-only + 1 and >= fine-tune, target-only val in [70, 85]; {secs:.0} s"
        ),
    )
}

fn ablation() -> Outcome {
    // The (64, 128, 256) schedule needs 256 samples in each train split.
    let mut gen = GeneratorConfig::default();
    gen.target.train = 256;
    let data = generate_synthetic(&gen).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::default();
    cfg.optim = OptimConfig::desk_scale();
    cfg.train.epochs = 10;

    let rejected = match run_ablation(&cfg, &data, &[AblationCondition::new(vec![32])], &[0]) {
        Err(e) => e.to_string(),
        Ok(_) => return Err("k = 32 was accepted".into()),
    };
    let names_minimum = rejected.contains("too small") && rejected.contains("r' + 1 = 33");

    let seeds: Vec<u64> = (0..5).collect();
    let table = run_ablation(&cfg, &data, &default_conditions(), &seeds).map_err(|e| e.to_string())?;
    let want: Vec<Vec<usize>> = vec![vec![33], vec![64], vec![128], vec![64, 128, 256]];
    let got: Vec<Vec<usize>> = table.rows.iter().map(|r| r.condition.k_schedule.clone()).collect();
    let complete = got == want
        && table.rows.iter().all(|r| r.accuracies.len() == 5 && r.mean.is_finite() && r.std.is_finite());
    let text = table.to_text().replace('\n', "; ");
    check(complete && names_minimum, format!("{text}k = 32 rejected: \"{rejected}\""))
}

fn main() -> ExitCode {
    let mut banks = Vec::new();
    let mut results: Vec<(&str, Outcome, Duration)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let status = if out.is_ok() { "PASS" } else { "FAIL" };
        let detail = match &out {
            Ok(d) | Err(d) => d.clone(),
        };
        println!("{status} {name} ({:.1} s): {detail}", started.elapsed().as_secs_f64());
        results.push((name, out, started.elapsed()));
    };
    run("gradient correctness", &mut gradient_correctness);
    run("analytic limit cases", &mut limit_cases);
    run("loss algebra", &mut loss_algebra);
    run("oracle equivalence", &mut oracle_equivalence);
    run("EMA", &mut ema);
    run("temperature", &mut temperature);
    run("determinism", &mut || determinism(&mut banks));
    run("directional transfer", &mut || directional(&mut banks));
    run("ablation harness", &mut ablation);
    let training_banks = banks.clone();
    run("clustering", &mut || clustering(&training_banks));
    let failed = results.iter().filter(|r| r.1.is_err()).count();
    println!("{} criteria, {failed} failed", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
