use featacq::data::{make_costs, split_thirds, CostKind, CostVector, Dataset, SplitSpec};
use featacq::evaluation::{evaluate, sweep, CostAxis, SweepOptions};
use featacq::training::{history_csv, train, Optimizer, TrainConfig};
use featacq::Error;

fn separable(rows: usize, n: usize, seed: u64) -> (Dataset, Dataset, Dataset) {
    let d = featacq_testkit::linear_task(rows, n, &[0, 1], seed);
    split_thirds(&d, &SplitSpec::thirds(seed)).unwrap()
}

fn adam() -> Optimizer {
    Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    }
}

fn opts() -> SweepOptions {
    SweepOptions {
        eval_seed: 3,
        eval_samples: 1,
        axis: CostAxis::Normalized,
        out_dir: None,
    }
}

#[test]
fn huge_lambda_stops_acquisition() {
    let (tr, va, _) = separable(600, 6, 1);
    let costs = make_costs(&CostKind::Linear, 6).unwrap();
    let cfg = TrainConfig {
        lambda: 1e3,
        epochs: 30,
        repr_dim: 6,
        ..TrainConfig::default()
    };
    let out = train(&tr, &va, &costs, &cfg).unwrap();
    let last = out.history.last().unwrap();
    assert!(last.valid_mean_cost < 0.05 * costs.total(), "{last:?}");
}

#[test]
fn free_features_fit_a_separable_task() {
    let (tr, va, te) = separable(900, 4, 2);
    let costs = make_costs(&CostKind::Uniform, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        repr_dim: 8,
        ..TrainConfig::default()
    };
    let out = train(&tr, &va, &costs, &cfg).unwrap();
    let best = out.history.iter().map(|r| r.valid_accuracy).fold(0.0, f64::max);
    assert!(best >= 0.95, "best validation accuracy {best}");
    let test = evaluate(&out.params, &te, &costs, 0, 3).unwrap();
    assert!(test.accuracy >= 0.9, "{test:?}");
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let (tr, va, _) = separable(300, 5, 3);
    let costs = make_costs(&CostKind::Linear, 5).unwrap();
    let cfg = TrainConfig {
        lambda: 0.05,
        epochs: 5,
        repr_dim: 6,
        batch_size: 7,
        baseline_enabled: true,
        seed: 42,
        optimizer: adam(),
        ..TrainConfig::default()
    };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(&tr, &va, &costs, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(1);
    let c = run(4);
    assert_eq!(a.params.values(), b.params.values());
    assert_eq!(a.params.values(), c.params.values());
    assert_eq!(history_csv(&a.history), history_csv(&c.history));

    let other = train(
        &tr,
        &va,
        &costs,
        &TrainConfig {
            seed: 43,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_ne!(a.params.values(), other.params.values());
}

#[test]
fn single_config_sweep_front_is_that_model() {
    let (tr, va, te) = separable(300, 4, 4);
    let costs = make_costs(&CostKind::Uniform, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        repr_dim: 4,
        ..TrainConfig::default()
    };
    let out = sweep(&tr, &va, &te, &costs, &[cfg], &opts()).unwrap();
    assert_eq!(out.valid_front.len(), 1);
    assert_eq!(out.valid_front[0].model_id, "m000");
    assert_eq!(out.test_curve.len(), 1);
}

#[test]
fn duplicated_config_collapses_to_one_point() {
    let (tr, va, te) = separable(300, 4, 5);
    let costs = make_costs(&CostKind::Uniform, 4).unwrap();
    let cfg = TrainConfig {
        lambda: 0.01,
        epochs: 3,
        repr_dim: 4,
        ..TrainConfig::default()
    };
    let out = sweep(&tr, &va, &te, &costs, &[cfg.clone(), cfg], &opts()).unwrap();
    let a = out.model("m000").unwrap();
    let b = out.model("m001").unwrap();
    assert_eq!(a.params.values(), b.params.values());
    assert_eq!(out.valid_front.len(), 1);
    assert_eq!(out.valid_front[0].model_id, "m000");
}

#[test]
fn stronger_cost_pressure_never_buys_more_features_on_the_front() {
    let (tr, va, te) = separable(900, 6, 6);
    let costs = make_costs(&CostKind::Uniform, 6).unwrap();
    let grid: Vec<TrainConfig> = [0.0, 0.01, 0.1, 1.0]
        .iter()
        .map(|&lambda| TrainConfig {
            lambda,
            epochs: 60,
            repr_dim: 8,
            learning_rate: 0.01,
            optimizer: adam(),
            ..TrainConfig::default()
        })
        .collect();
    let out = sweep(&tr, &va, &te, &costs, &grid, &opts()).unwrap();
    let mut selected: Vec<(f64, f64)> = out
        .valid_front
        .iter()
        .map(|p| {
            let e = out.entries.iter().find(|e| e.model_id == p.model_id).unwrap();
            (e.config.lambda, p.mean_cost)
        })
        .collect();
    selected.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in selected.windows(2) {
        assert!(w[1].1 <= w[0].1, "front costs by lambda: {selected:?}");
    }
}

#[test]
fn diverging_configs_are_excluded() {
    let (tr, va, te) = separable(150, 3, 7);
    let costs = CostVector::new(vec![1.0, 1.0, 1.0]).unwrap();
    let good = TrainConfig {
        epochs: 2,
        repr_dim: 3,
        ..TrainConfig::default()
    };
    let bad = TrainConfig {
        init_scale: Some(1e200),
        ..good.clone()
    };
    match train(&tr, &va, &costs, &bad) {
        Err(Error::TrainingDiverged(d)) => assert!(d.epoch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
    let out = sweep(&tr, &va, &te, &costs, &[bad.clone(), good], &opts()).unwrap();
    assert!(out.entries[0].outcome.is_err());
    assert_eq!(out.valid_front[0].model_id, "m001");
    assert!(matches!(
        sweep(&tr, &va, &te, &costs, &[bad.clone(), bad], &opts()),
        Err(Error::SweepFailed)
    ));
}

#[test]
fn sweep_writes_models_and_manifest() {
    let (tr, va, te) = separable(150, 3, 8);
    let costs = make_costs(&CostKind::Uniform, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let grid = vec![
        TrainConfig {
            epochs: 2,
            repr_dim: 3,
            ..TrainConfig::default()
        };
        2
    ];
    let o = SweepOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..opts()
    };
    sweep(&tr, &va, &te, &costs, &grid, &o).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join("sweep_manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    assert!(manifest.starts_with("model_id,status,lambda,params,history,config\n"));
    for id in ["m000", "m001"] {
        for f in ["params.txt", "history.csv", "config.json"] {
            assert!(dir.path().join("models").join(id).join(f).is_file());
        }
    }
}
