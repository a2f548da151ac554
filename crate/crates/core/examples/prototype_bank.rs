//! Clusters two sets of random embeddings with a multi-granularity schedule
//! and prints cluster sizes, concentration factors and cross-domain
//! nearest prototypes.
//!
//! ```text
//! cargo run --release --example prototype_bank
//! ```

use pctl::cluster::{BankParams, PrototypeBank};
use pctl::encoder::{Domain, EmbeddingMatrix};
use pctl::numcore::Tensor;
use rand::Rng;

fn blobs(domain: Domain, first_id: u64, n: usize, offset: f64, rng: &mut impl Rng) -> pctl::Result<EmbeddingMatrix> {
    let d = 4;
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        // Three loose groups along the first axis.
        let centre = (i % 3) as f64 * 2.0 + offset;
        data.push(centre + rng.random_range(-0.3..0.3));
        data.extend((1..d).map(|_| rng.random_range(-0.3..0.3)));
    }
    let ids = (first_id..first_id + n as u64).collect();
    EmbeddingMatrix::new(domain, ids, Tensor::matrix(n, d, data)?)
}

fn main() -> pctl::Result<()> {
    let mut rng = pctl::seed::rng(7, &[]);
    let source = blobs(Domain::Source, 0, 60, 0.0, &mut rng)?;
    let target = blobs(Domain::Target, 1000, 30, 0.5, &mut rng)?;
    let schedule = [3, 6];
    let bank = PrototypeBank::build(
        &source,
        &target,
        BankParams {
            schedule: &schedule,
            alpha: 10.0,
            tau_prime: 0.2,
            seed: 0,
            epoch: 0,
        },
    )?;

    for domain in [Domain::Source, Domain::Target] {
        for (m, round) in bank.domain(domain).rounds.iter().enumerate() {
            let phi: Vec<String> = round.concentration.iter().map(|p| format!("{p:.3}")).collect();
            println!(
                "{:<6} m={} k={}  sizes {:?}  phi [{}]  objective {:.3} after {} iterations",
                domain.name(),
                m,
                round.k,
                round.cluster_sizes(),
                phi.join(", "),
                round.objective,
                round.objective_history.len()
            );
        }
    }
    println!("max |mean(phi) - tau'| = {:.2e}", bank.concentration_mean_error());

    // Which target prototype is closest to the first few source samples.
    for id in 0..3 {
        let p = bank.nearest(Domain::Source, id, Domain::Target, 0);
        println!("source sample {id} -> target prototype {p:?}");
    }
    Ok(())
}
