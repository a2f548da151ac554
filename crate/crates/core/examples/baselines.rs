//! Trains the two baselines: target-only and source-pretrain-then-fine-tune.
//! Fine-tuning writes its source phase and its target phase as separately
//! labelled metric rows.
//!
//! ```text
//! cargo run --release --example baselines -- [epochs]
//! ```

use pctl::data::{generate_synthetic, GeneratorConfig};
use pctl::encoder::{Domain, Split};
use pctl::trainer::{evaluate, train_fine_tune, train_target_only, OptimConfig, TrainConfig};

fn main() -> pctl::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(30, |s| s.parse().expect("epochs"));
    let data = generate_synthetic(&GeneratorConfig::default())?;
    let mut cfg = TrainConfig::default();
    cfg.train.epochs = epochs;
    cfg.train.pretrain_epochs = epochs;
    cfg.optim = OptimConfig::desk_scale();

    let target_only = train_target_only(&cfg, &data)?;
    let fine_tune = train_fine_tune(&cfg, &data)?;
    for (name, out) in [("target-only", &target_only), ("fine-tune", &fine_tune)] {
        let phases: Vec<&str> = out.metrics.rows.iter().map(|r| r.phase).collect();
        let source_rows = phases.iter().filter(|p| **p == "source").count();
        let test = evaluate(&out.best, &data, Domain::Target, Split::Test)?;
        println!(
            "{name:<12} {} rows ({source_rows} source-phase), best epoch {:?}, target test acc {:.3}",
            phases.len(),
            out.metrics.best_epoch,
            test.accuracy
        );
    }
    Ok(())
}
