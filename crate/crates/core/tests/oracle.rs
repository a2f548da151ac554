mod common;

use common::{brute_force_kmeans, oracle_input, oracle_losses, same_partition};
use pctl::cluster::kmeans;
use pctl::loss::total_loss;
use pctl::numcore::{Graph, Tensor};
use pctl::verify::toy::{ToyInstance, ToyParams};

fn six_sample_params() -> ToyParams {
    ToyParams {
        d: 4,
        n: 3,
        k_schedule: vec![2],
        r: 1,
        r_prime: 1,
        classifier_hidden: 3,
        ..ToyParams::default()
    }
}

fn library_values(toy: &ToyInstance) -> [f64; 14] {
    let mut g = Graph::new();
    let x = g.param(toy.point.clone());
    let vars = toy.unpack(&mut g, x).unwrap();
    let (s, t) = toy.batches(&vars);
    let v = total_loss(&mut g, &toy.context(&vars), &s, &t).unwrap().breakdown.values();
    v[..14].try_into().unwrap()
}

#[test]
fn losses_match_direct_summation() {
    for seed in 0..20 {
        let toy = ToyInstance::random(&six_sample_params(), seed).unwrap();
        let want = oracle_losses(&oracle_input(&toy)).values();
        let got = library_values(&toy);
        for (i, (a, b)) in got.iter().zip(want).enumerate() {
            assert!((a - b).abs() <= 1e-12, "seed {seed}, field {i}: {a} vs {b}");
        }
    }
}

#[test]
fn kmeans_matches_exhaustive_search() {
    let mut rng = pctl::seed::rng(99, &[]);
    use rand::Rng;
    for _ in 0..30 {
        let pts: Vec<Vec<f64>> = (0..7).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let (best, obj) = brute_force_kmeans(&pts, 2);
        let flat = Tensor::from_rows(&pts).unwrap();
        // Lloyd can stop in a local optimum; over several seeds it finds the global one.
        let found = (0..10).map(|s| kmeans(&flat, 2, s).unwrap()).fold(f64::INFINITY, |m, k| m.min(k.objective));
        assert!((found - obj).abs() < 1e-9, "{found} vs {obj}");
        let km = (0..10)
            .map(|s| kmeans(&flat, 2, s).unwrap())
            .find(|k| (k.objective - obj).abs() < 1e-9)
            .unwrap();
        assert!(same_partition(&km.assignments, &best));
    }
}

#[test]
fn four_point_line() {
    let pts = vec![vec![0.0], vec![1.0], vec![9.0], vec![10.0]];
    let (best, obj) = brute_force_kmeans(&pts, 2);
    assert!(same_partition(&best, &[0, 0, 1, 1]));
    assert_eq!(obj, 1.0);
    let km = kmeans(&Tensor::from_rows(&pts).unwrap(), 2, 0).unwrap();
    assert!(same_partition(&km.assignments, &best));
    assert_eq!(km.objective, obj);
}
