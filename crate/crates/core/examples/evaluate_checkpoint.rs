//! Trains briefly, saves the best checkpoint, loads it again and reports
//! the confusion matrix on every target split.
//!
//! ```text
//! cargo run --release --example evaluate_checkpoint -- [model.ckpt]
//! ```

use pctl::data::{generate_synthetic, GeneratorConfig};
use pctl::encoder::{checkpoint, Domain, Split};
use pctl::trainer::{evaluate, train, OptimConfig, TrainConfig};

fn main() -> pctl::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "model.ckpt".into());
    let data = generate_synthetic(&GeneratorConfig::default())?;
    let mut cfg = TrainConfig::default();
    cfg.train.epochs = 5;
    cfg.optim = OptimConfig::desk_scale();
    let out = train(&cfg, &data)?;

    checkpoint::save(&out.best, path.as_ref())?;
    let model = checkpoint::load(path.as_ref())?;
    assert_eq!(checkpoint::to_bytes(&model), checkpoint::to_bytes(&out.best));

    for split in [Split::Train, Split::Val, Split::Test] {
        let e = evaluate(&model, &data, Domain::Target, split)?;
        println!(
            "{:<5} n={:3}  acc {:.3}  ce {:.4}  TP {:3} FP {:3} FN {:3} TN {:3}",
            split.name(),
            e.n,
            e.accuracy,
            e.ce,
            e.tp,
            e.fp,
            e.fn_,
            e.tn
        );
    }
    Ok(())
}
