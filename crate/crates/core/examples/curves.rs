//! Trains PCTL, writes the metrics CSV and renders it as an SVG with loss
//! and accuracy panels.
//!
//! ```text
//! cargo run --release --example curves -- [out-dir]
//! ```

use std::path::PathBuf;

use pctl::cli::render_svg;
use pctl::data::{generate_synthetic, GeneratorConfig};
use pctl::trainer::{train, MetricsTable, OptimConfig, TrainConfig};

fn main() -> pctl::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&dir).map_err(|e| pctl::Error::io(&dir, e))?;
    let data = generate_synthetic(&GeneratorConfig::default())?;
    let mut cfg = TrainConfig::default();
    cfg.train.epochs = 15;
    cfg.optim = OptimConfig::desk_scale();
    let out = train(&cfg, &data)?;

    let csv = dir.join("metrics.csv");
    out.metrics.write(&csv, None)?;
    let text = out.metrics.to_csv();
    let svg = render_svg(&MetricsTable::parse(&text)?)?;
    let svg_path = dir.join("curves.svg");
    std::fs::write(&svg_path, svg).map_err(|e| pctl::Error::io(&svg_path, e))?;
    println!("wrote {} and {}", csv.display(), svg_path.display());
    Ok(())
}
