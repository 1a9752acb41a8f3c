use orthoseg::checkpoint::Checkpoint;
use orthoseg::data::{prepare_tiles, synth_dataset};
use orthoseg::trainer::{nesterov_update, Event, Phase, PlateauTracker, Schedule, METRICS_HEADER};
use orthoseg::{Dataset, Error, RunConfig, Trainer, TrainerConfig};

fn small_config() -> RunConfig {
    let mut c = RunConfig::desk();
    c.network.primary_filters = vec![4, 6, 8];
    c.network.auxiliary_filters = vec![4, 6, 6];
    c.network.decoder_filters = 8;
    c.network.sccb.branches = vec![(5, 3), (11, 3)];
    c.trainer.eval_interval = 5;
    c
}

fn dataset(cfg: &RunConfig) -> Dataset {
    let scenes: Vec<_> = synth_dataset(1, 128, 3)
        .into_iter()
        .enumerate()
        .map(|(i, r)| (format!("s{i}"), r))
        .collect();
    let p = prepare_tiles(&scenes, &cfg.data, 3).unwrap();
    Dataset::from_prepared(&p, cfg).unwrap()
}

#[test]
fn nesterov_matches_scalar_recurrence_on_quadratic() {
    // loss x^2 / 2, gradient x
    let (lr, mu) = (0.1f64, 0.99f64);
    let (mut x, mut v) = ([1.0f64], [0.0f64]);
    let mut oracle = (1.0f64, 0.0f64);
    for _ in 0..2 {
        let g = [x[0]];
        nesterov_update(&mut x, &mut v, &g, lr, mu);
        let (ox, ov) = oracle;
        let nv = mu * ov - lr * ox;
        oracle = (ox + mu * nv - lr * ox, nv);
        assert!((x[0] - oracle.0).abs() < 1e-12);
        assert!((v[0] - oracle.1).abs() < 1e-12);
    }
    assert!((x[0] - 0.543591).abs() < 1e-12);
}

#[test]
fn zero_momentum_is_plain_sgd() {
    let mut x = [1.0f64, -2.0];
    let mut v = [0.0f64; 2];
    nesterov_update(&mut x, &mut v, &[0.5, 0.25], 0.2, 0.0);
    assert_eq!(x, [0.9, -2.05]);
}

#[test]
fn tracker_never_fires_on_decreasing_losses() {
    let mut t = PlateauTracker::new(3000, 1e-6);
    for i in 1..=100u64 {
        assert!(!t.observe(i * 1000, 10.0 - i as f64 * 0.01));
    }
}

#[test]
fn tracker_fires_at_window_on_constant_loss() {
    let mut t = PlateauTracker::new(25_000, 1e-6);
    let fired: Vec<u64> = (1..=60u64)
        .map(|k| k * 1000)
        .filter(|&i| t.observe(i, 1.0))
        .collect();
    assert_eq!(fired, vec![26_000, 51_000]);
}

#[test]
fn tracker_follows_scripted_trace() {
    // best at 1000, a tiny non-improvement at 3000, a real improvement at 4000
    let trace = [
        (1000, 1.0),
        (2000, 1.0),
        (3000, 1.0 - 5e-7),
        (4000, 0.9),
        (5000, 0.95),
        (6000, 0.95),
        (7000, 0.95),
        (8000, 0.95),
        (9000, 0.95),
        (10000, 0.9),
    ];
    let mut t = PlateauTracker::new(3000, 1e-6);
    let fired: Vec<u64> = trace
        .iter()
        .filter(|(i, l)| t.observe(*i, *l))
        .map(|(i, _)| *i)
        .collect();
    assert_eq!(fired, vec![7000, 10000]);
    assert_eq!(t.best_loss, 0.9);
}

#[test]
fn schedule_replays_identically_from_events() {
    let cfg = TrainerConfig::default();
    let mut a = Schedule::initial(&cfg);
    let mut log = Vec::new();
    for _ in 0..4 {
        log.push(a.on_plateau(&cfg));
    }
    let mut b = Schedule::initial(&cfg);
    for t in &log {
        assert_eq!(&b.on_plateau(&cfg), t);
    }
    assert_eq!(a, b);
    assert_eq!(a.phase, Phase::FineTuning);
    assert!(a.frozen.is_empty());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut cfg = small_config();
    cfg.trainer.learning_rate = 0.0;
    let data = dataset(&cfg);
    let mut t = Trainer::new(cfg).unwrap();
    let before = t.params().clone();
    for _ in 0..5 {
        t.step(&data).unwrap();
    }
    assert_eq!(t.params(), &before);
}

#[test]
fn frozen_parameters_unchanged_after_many_steps() {
    let cfg = small_config();
    let data = dataset(&cfg);
    let mut t = Trainer::new(cfg).unwrap();
    let before = t.params().clone();
    for _ in 0..100 {
        t.step(&data).unwrap();
    }
    let mut frozen = 0;
    let mut moved = 0;
    for (name, p) in before.iter() {
        let now = t.params().tensor(name).unwrap();
        let block = name.starts_with("encoder.primary.block1.")
            || name.starts_with("encoder.primary.block2.");
        assert_eq!(t.params().is_trainable(name), !block, "{name}");
        if block {
            assert_eq!(now, p.value.as_ref(), "{name}");
            frozen += 1;
        } else if now != p.value.as_ref() {
            moved += 1;
        }
    }
    assert!(frozen > 0 && moved > 0);
}

#[test]
fn noise_free_loss_on_one_tile_trends_down() {
    let mut cfg = small_config();
    cfg.network.primary_filters = vec![16, 32, 64];
    cfg.network.auxiliary_filters = vec![16, 32, 32];
    cfg.network.decoder_filters = 32;
    cfg.network.sccb.branches = vec![(5, 8), (11, 8)];
    let mut data = dataset(&cfg);
    data.train.truncate(1);
    let tile = data.train.clone();
    let mut t = Trainer::new(cfg).unwrap();
    let mut losses = vec![t.mean_loss(&tile).unwrap()];
    let mut noisy = Vec::new();
    for i in 1..=200 {
        noisy.push(t.step(&data).unwrap());
        if i % 10 == 0 {
            losses.push(t.mean_loss(&tile).unwrap());
        }
    }
    for w in losses.windows(6) {
        assert!(
            w[5] <= w[0],
            "inference loss rose across a 50-iteration window: {losses:?}"
        );
    }
    let rises = noisy.windows(2).filter(|w| w[1] > w[0] * 1.05).count();
    assert!(losses[20] < losses[0], "{losses:?}");
    assert!(rises < noisy.len() / 2);
}

#[test]
fn resume_matches_uninterrupted_run_bitwise() {
    let cfg = small_config();
    let data = dataset(&cfg);
    let mut a = Trainer::new(cfg.clone()).unwrap();
    a.run(&data, 7, None, &mut |_| {}).unwrap();
    let bytes = a.checkpoint().to_bytes();
    a.run(&data, 17, None, &mut |_| {}).unwrap();

    let mut b = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    b.run(&data, 17, None, &mut |_| {}).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(a.checkpoint().to_bytes(), b.checkpoint().to_bytes());
}

#[test]
fn run_writes_metrics_and_checkpoints() {
    let mut cfg = small_config();
    cfg.trainer.checkpoint_interval = 10;
    let data = dataset(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    let mut evals = 0;
    t.run(&data, 20, Some(dir.path()), &mut |e| {
        if let Event::Evaluated(_) = e {
            evals += 1
        }
    })
    .unwrap();
    assert_eq!(evals, 4);
    let log = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 5);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[0], "5");
    assert_eq!(first[5], "initial");
    for f in [
        "best.ckpt",
        "checkpoint_00000010.ckpt",
        "checkpoint_00000020.ckpt",
        "final.ckpt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    // appending continues the same log
    let mut resumed = Trainer::from_checkpoint(
        Checkpoint::load(&dir.path().join("final.ckpt"), None, false).unwrap(),
    )
    .unwrap();
    resumed
        .run(&data, 25, Some(dir.path()), &mut |_| {})
        .unwrap();
    let log = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert_eq!(log.matches("iteration,").count(), 1);
}

#[test]
fn non_finite_loss_aborts_with_diagnostic_checkpoint() {
    let cfg = small_config();
    let data = dataset(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    let w = t
        .params_mut()
        .value_mut("decoder.block1.decision.bias")
        .unwrap();
    w.data_mut()[0] = f32::NAN;
    let err = t.run(&data, 3, Some(dir.path()), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
    assert!(dir.path().join("diagnostic.ckpt").exists());
}
