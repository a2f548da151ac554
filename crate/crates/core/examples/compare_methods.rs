//! Trains PCTL and both baselines on a generated dataset over several seeds
//! and prints mean target test accuracy per method.
//!
//! ```text
//! cargo run --release --example compare_methods -- [seeds] [epochs]
//! ```

use pctl::data::{generate_synthetic, GeneratorConfig};
use pctl::encoder::{Domain, Split};
use pctl::trainer::{evaluate, mean_std, train, Mode, OptimConfig, TrainConfig};

fn main() -> pctl::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let epochs: usize = args.next().map_or(30, |s| s.parse().expect("epoch count"));
    let data = generate_synthetic(&GeneratorConfig::default())?;
    if let Some(p) = data.header().probe {
        println!(
            "linear probe on target test: source-trained {:.3}, target-trained {:.3}",
            p.source_probe_accuracy, p.target_probe_accuracy
        );
    }
    for mode in [Mode::TargetOnly, Mode::FineTune, Mode::Pctl] {
        let started = std::time::Instant::now();
        let mut accs = Vec::new();
        let mut vals = Vec::new();
        for seed in 0..seeds {
            let mut cfg = TrainConfig::default();
            cfg.train.mode = mode;
            cfg.train.seed = seed;
            cfg.train.epochs = epochs;
            cfg.train.pretrain_epochs = epochs;
            cfg.optim = OptimConfig::desk_scale();
            let out = train(&cfg, &data)?;
            accs.push(evaluate(&out.best, &data, Domain::Target, Split::Test)?.accuracy);
            vals.push(evaluate(&out.best, &data, Domain::Target, Split::Val)?.accuracy);
        }
        let (m, s) = mean_std(&accs);
        let (vm, _) = mean_std(&vals);
        println!(
            "{:<12} test {:6.2} ± {:4.2}   val {:6.2}   ({:.1} s)",
            mode.name(),
            100.0 * m,
            100.0 * s,
            100.0 * vm,
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
