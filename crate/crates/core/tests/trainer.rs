use pctl::data::{generate_synthetic, DatasetFile, GeneratorConfig, SplitCounts};
use pctl::encoder::{checkpoint, Branch, Domain, ModelState, Split};
use pctl::loss::cross_entropy_sum;
use pctl::numcore::Graph;
use pctl::trainer::{
    evaluate, train, train_fine_tune, train_target_only, train_with, Mode, MetricsTable, OptimConfig, RunMetrics,
    TrainConfig,
};

fn small_data() -> DatasetFile {
    let counts = |train| SplitCounts {
        train,
        val: 64,
        test: 64,
    };
    generate_synthetic(&GeneratorConfig {
        source: counts(256),
        target: counts(128),
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn small_cfg(mode: Mode, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.train.mode = mode;
    cfg.train.epochs = epochs;
    cfg.train.pretrain_epochs = epochs;
    cfg.train.batch_size = 32;
    cfg.cluster.k_schedule = vec![40];
    cfg.optim = OptimConfig::desk_scale();
    cfg
}

#[test]
fn best_epoch_has_lowest_validation_ce() {
    let data = small_data();
    let out = train(&small_cfg(Mode::Pctl, 6), &data).unwrap();
    let rows = &out.metrics.rows;
    let best = out.metrics.best_epoch.unwrap();
    let min = rows.iter().map(|r| r.val_ce).fold(f64::INFINITY, f64::min);
    let first_min = rows.iter().find(|r| r.val_ce == min).unwrap().epoch;
    assert_eq!(best, first_min);
    let val = evaluate(&out.best, &data, Domain::Target, Split::Val).unwrap();
    assert_eq!(val.ce, min);
    assert!(rows.iter().all(|r| r.phase == "joint" && r.concentration_error <= 1e-9));
}

#[test]
fn pctl_pairs_batches_from_both_domains() {
    let data = small_data();
    let out = train(&small_cfg(Mode::Pctl, 1), &data).unwrap();
    let r = &out.metrics.rows[0];
    // 128 target samples in batches of 32; the source pairs with each.
    assert_eq!((r.source_batches, r.target_batches), (4, 4));
    assert!(r.loss.l_dual > 0.0 && r.loss.total.is_finite());
}

#[test]
fn target_only_never_touches_the_source() {
    let data = small_data();
    let out = train_target_only(&small_cfg(Mode::TargetOnly, 2), &data).unwrap();
    for r in &out.metrics.rows {
        assert_eq!(r.phase, "target");
        assert_eq!(r.source_batches, 0);
        assert_eq!(r.loss.l_s, 0.0);
        assert_eq!(r.loss.l_dual, 0.0);
    }
}

#[test]
fn fine_tune_labels_both_phases() {
    let data = small_data();
    let mut cfg = small_cfg(Mode::FineTune, 2);
    cfg.train.pretrain_epochs = 3;
    let out = train_fine_tune(&cfg, &data).unwrap();
    let phases: Vec<&str> = out.metrics.rows.iter().map(|r| r.phase).collect();
    assert_eq!(phases, ["source", "source", "source", "target", "target"]);
    // Only the target phase may provide the kept checkpoint.
    assert!(out.metrics.best_epoch.unwrap() > 3);
}

#[test]
fn callback_sees_every_row_and_can_stop_the_run() {
    let data = small_data();
    let mut seen = Vec::new();
    let out = train_with(&small_cfg(Mode::Pctl, 3), &data, &mut |row, model, _| {
        seen.push((row.epoch, model.inv_temperature()));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[2].1, out.last.inv_temperature());

    let err = train_with(&small_cfg(Mode::Pctl, 3), &data, &mut |row, _, _| {
        if row.epoch == 2 {
            Err(pctl::Error::InvalidArgument("stop".into()))
        } else {
            Ok(())
        }
    })
    .unwrap_err();
    assert!(err.to_string().contains("stop"));
}

#[test]
fn divergence_aborts_with_location() {
    let data = small_data();
    let mut cfg = small_cfg(Mode::TargetOnly, 3);
    cfg.optim.lr = 1e200;
    cfg.optim.body_lr = 1e200;
    match train(&cfg, &data) {
        Err(pctl::Error::Aborted { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected an abort, got {other:?}"),
    }
}

#[test]
fn metrics_csv_parses_back() {
    let data = small_data();
    let out = train(&small_cfg(Mode::Pctl, 2), &data).unwrap();
    let text = out.metrics.to_csv();
    assert!(text.starts_with(&RunMetrics::header()));
    let table = MetricsTable::parse(&text).unwrap();
    let totals = table.column("total").unwrap();
    let want: Vec<f64> = out.metrics.rows.iter().map(|r| r.loss.total).collect();
    assert_eq!(totals, want);
    assert!(!text.contains("seconds"));
    assert!(out.metrics.timings_csv().lines().count() == 3);
}

#[test]
fn checkpoint_restores_predictions() {
    let data = small_data();
    let out = train(&small_cfg(Mode::Pctl, 2), &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&out.best, &path).unwrap();
    let back: ModelState = checkpoint::load(&path).unwrap();
    assert_eq!(back, out.best);
    let a = evaluate(&out.best, &data, Domain::Target, Split::Test).unwrap();
    let b = evaluate(&back, &data, Domain::Target, Split::Test).unwrap();
    assert_eq!(a, b);
}

#[test]
fn momentum_embeddings_carry_no_encoder_gradient() {
    let data = small_data();
    let model = ModelState::new(&small_cfg(Mode::Pctl, 1).model, 0).unwrap();
    let samples: Vec<_> = data.split(Domain::Target, Split::Train).into_iter().take(8).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label()).collect();
    let mut g = Graph::new();
    let vars = model.register(&mut g);
    let m = g.constant(model.encode_batch(&samples, Branch::Momentum).unwrap());
    let loss = cross_entropy_sum(&mut g, &vars.classifier, m, &labels).unwrap();
    g.backward(loss).unwrap();
    let grads = model.collect_grads(&g, &vars);
    let enc = vars.encoder.len();
    assert!(grads[..enc].iter().flatten().all(|&v| v == 0.0));
    assert!(grads[enc..].iter().flatten().any(|&v| v != 0.0));
}

#[test]
fn k_above_domain_size_is_a_config_error() {
    let data = small_data();
    let mut cfg = small_cfg(Mode::Pctl, 1);
    cfg.cluster.k_schedule = vec![200];
    let err = train(&cfg, &data).unwrap_err();
    assert!(matches!(err, pctl::Error::Config(_)), "{err}");
    assert!(err.to_string().contains("k^(1)"), "{err}");
}
