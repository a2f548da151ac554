//! Evaluates the full objective on a small random instance, prints every
//! component and checks that the parts add up.
//!
//! ```text
//! cargo run --release --example loss_breakdown -- [seed]
//! ```

use pctl::loss::{total_loss, LossBreakdown};
use pctl::numcore::Graph;
use pctl::verify::toy::{ToyInstance, ToyParams};

fn main() -> pctl::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let toy = ToyInstance::random(&ToyParams::default(), seed)?;

    let mut g = Graph::new();
    let x = g.param(toy.point.clone());
    let vars = toy.unpack(&mut g, x)?;
    let (source, target) = toy.batches(&vars);
    let out = total_loss(&mut g, &toy.context(&vars), &source, &target)?;
    g.backward(out.total)?;

    let b = &out.breakdown;
    for (name, value) in LossBreakdown::FIELDS.iter().zip(b.values()) {
        println!("{name:<16} {value:.6}");
    }
    assert_eq!(b.l_intra, b.l_target + b.l_source);
    assert_eq!(b.l_inter, b.l_s2t + b.l_t2s);
    assert_eq!(b.l_dual, b.l_intra + b.l_inter);
    assert_eq!(b.total, b.lambda * b.l_dual + b.l_t + b.l_s);

    let grad = g.grad(x).expect("parameter");
    let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("gradient norm over {} free values: {norm:.4}", grad.len());
    Ok(())
}
