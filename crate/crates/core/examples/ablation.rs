//! Compares clustering schedules: single-granularity k = 33, 64, 128 and
//! the multi-granularity (64, 128, 256), over several seeds. Also shows
//! that k = 32 is rejected up front.
//!
//! ```text
//! cargo run --release --example ablation -- [seeds] [epochs]
//! ```

use pctl::data::{generate_synthetic, GeneratorConfig};
use pctl::trainer::{default_conditions, run_ablation, AblationCondition, OptimConfig, TrainConfig};

fn main() -> pctl::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(3, |s| s.parse().expect("seed count"));
    let epochs: usize = args.next().map_or(10, |s| s.parse().expect("epochs"));

    // The largest schedule needs at least 256 train samples per domain.
    let mut gen = GeneratorConfig::default();
    gen.target.train = gen.target.train.max(256);
    let data = generate_synthetic(&gen)?;

    let mut cfg = TrainConfig::default();
    cfg.train.epochs = epochs;
    cfg.optim = OptimConfig::desk_scale();

    let too_small = [AblationCondition::new(vec![32])];
    if let Err(e) = run_ablation(&cfg, &data, &too_small, &[0]) {
        println!("k = 32: {e}");
    }

    let seeds: Vec<u64> = (0..seeds).collect();
    let table = run_ablation(&cfg, &data, &default_conditions(), &seeds)?;
    print!("{}", table.to_text());
    Ok(())
}
