use pctl::data::{self, batch_iter, generate_synthetic, GeneratorConfig};
use pctl::encoder::{Domain, Split};

#[test]
fn default_dataset_shape() {
    let d = generate_synthetic(&GeneratorConfig::default()).unwrap();
    let c = d.header().counts;
    assert_eq!((c.source.train, c.target.train), (1536, 128));
    for domain in [Domain::Source, Domain::Target] {
        for split in [Split::Train, Split::Val, Split::Test] {
            let rows = d.split(domain, split);
            let pos = rows.iter().filter(|r| r.label() == 1).count();
            assert_eq!(pos, rows.len() / 2);
        }
    }
    // The shift must make a source-trained linear read-out worse on the target.
    let p = d.header().probe.unwrap();
    assert!(p.source_probe_accuracy < p.target_probe_accuracy, "{p:?}");
}

#[test]
fn file_round_trip_preserves_every_bit() {
    let d = generate_synthetic(&GeneratorConfig {
        seed: 5,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    data::save(&d, &path).unwrap();
    let back = data::load(&path).unwrap();
    assert_eq!(back, d);
    assert_eq!(data::to_jsonl(&back), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn paired_batches_cover_the_smaller_domain() {
    let d = generate_synthetic(&GeneratorConfig::default()).unwrap();
    let batches = batch_iter(&d, 64, 0, 0).unwrap();
    assert_eq!(batches.len(), 2);
    let mut seen: Vec<u64> = batches.iter().flat_map(|b| b.target.iter().map(|r| r.id)).collect();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), 128);
    assert_ne!(
        batch_iter(&d, 64, 1, 0).unwrap()[0].target.iter().map(|r| r.id).collect::<Vec<_>>(),
        batches[0].target.iter().map(|r| r.id).collect::<Vec<_>>()
    );
}
