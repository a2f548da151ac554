//! Trains PCTL on a generated dataset and prints one line per epoch.
//!
//! ```text
//! cargo run --release --example train_pctl -- [epochs] [seed]
//! ```

use pctl::data::{generate_synthetic, GeneratorConfig};
use pctl::encoder::{Domain, Split};
use pctl::trainer::{evaluate, train_with, Mode, OptimConfig, TrainConfig};

fn main() -> pctl::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(30, |s| s.parse().expect("epochs"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let data = generate_synthetic(&GeneratorConfig::default())?;
    let mut cfg = TrainConfig::default();
    cfg.train.mode = Mode::Pctl;
    cfg.train.epochs = epochs;
    cfg.train.seed = seed;
    cfg.optim = OptimConfig::desk_scale();

    println!("epoch  total    dual     L_t      L_s      1/tau    val_ce   val_acc");
    let out = train_with(&cfg, &data, &mut |row, _model, best| {
        let l = &row.loss;
        println!(
            "{:5}  {:7.4}  {:7.4}  {:7.4}  {:7.4}  {:7.4}  {:7.4}  {:.3}{}",
            row.epoch,
            l.total,
            l.l_dual,
            l.l_t,
            l.l_s,
            row.inv_temperature,
            row.val_ce,
            row.val_acc,
            if best { "  *" } else { "" }
        );
        Ok(())
    })?;

    let test = evaluate(&out.best, &data, Domain::Target, Split::Test)?;
    println!("best epoch {:?}: target test accuracy {:.3}", out.metrics.best_epoch, test.accuracy);
    Ok(())
}
