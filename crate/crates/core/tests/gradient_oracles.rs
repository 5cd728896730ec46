use featacq::data::CostVector;
use featacq::model::{init_params, CellType, ModelParams, ModelSpec};
use featacq::training::{rollout_gradient, rollout_scalar, TrainConfig};
use featacq_testkit::{
    all_mask_sequences, central_difference, expected_objective, forward_path, max_relative_error, monte_carlo_gradient,
    outside_band, pathwise_cost_objective, with_values,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-3;
const FD_FLOOR: f64 = 1e-2;

fn tiny(cell: CellType, n: usize, p: usize, steps: usize, seed: u64) -> ModelParams {
    init_params(ModelSpec::new(n, 2, p, steps, cell), seed, Some(0.8)).unwrap()
}

#[test]
fn reverse_mode_matches_finite_differences() {
    for cell in [CellType::Rnn, CellType::Gru] {
        for seed in 0..4 {
            let params = tiny(cell, 3, 4, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let costs = CostVector::new((0..3).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap();
            let masks: Vec<Vec<bool>> = (0..2).map(|_| (0..3).map(|_| rng.random_bool(0.5)).collect()).collect();
            let label = rng.random_range(0..2);
            let weight = rng.random_range(-1.5..1.5);
            let lambda = 0.7;

            let analytic = rollout_gradient(&params, &x, label, &costs, &masks, weight, lambda)
                .unwrap()
                .total();
            let numeric = central_difference(
                |v| rollout_scalar(&with_values(&params, v), &x, label, &costs, &masks, weight, lambda).unwrap(),
                params.values(),
                FD_STEP,
            );
            let err = max_relative_error(analytic.as_slice(), &numeric, FD_FLOOR);
            assert!(err < 1e-6, "{cell:?} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn each_term_matches_its_own_finite_difference() {
    let params = tiny(CellType::Gru, 3, 4, 3, 9);
    let x = [0.4, -1.2, 0.9];
    let costs = CostVector::new(vec![0.2, 0.5, 1.0]).unwrap();
    let masks = vec![
        vec![true, false, false],
        vec![false, true, true],
        vec![true, true, false],
    ];
    let terms = rollout_gradient(&params, &x, 1, &costs, &masks, 0.6, 2.0).unwrap();
    let scalar = |w, lambda| {
        central_difference(
            |v| rollout_scalar(&with_values(&params, v), &x, 1, &costs, &masks, w, lambda).unwrap(),
            params.values(),
            FD_STEP,
        )
    };
    let loss_only = scalar(0.0, 0.0);
    assert!(max_relative_error(terms.loss.as_slice(), &loss_only, FD_FLOOR) < 1e-6);
    let with_score: Vec<f64> = scalar(0.6, 0.0).iter().zip(&loss_only).map(|(a, b)| a - b).collect();
    assert!(max_relative_error(terms.score.as_slice(), &with_score, FD_FLOOR) < 1e-6);
    let with_cost: Vec<f64> = scalar(0.0, 2.0).iter().zip(&loss_only).map(|(a, b)| a - b).collect();
    assert!(max_relative_error(terms.cost.as_slice(), &with_cost, FD_FLOOR) < 1e-6);
}

#[test]
fn clamped_probabilities_have_zero_gradient() {
    let mut params = tiny(CellType::Rnn, 2, 3, 1, 4);
    params.block_mut("policy0.bias").unwrap()[0] = 40.0;
    let x = [1.0, -1.0];
    let costs = CostVector::new(vec![1.0, 1.0]).unwrap();
    let masks = vec![vec![true, false]];
    let g = rollout_gradient(&params, &x, 0, &costs, &masks, 1.0, 1.0)
        .unwrap()
        .total();
    let layout = params.layout();
    let bias = layout.blocks().iter().find(|b| b.name == "policy0.bias").unwrap();
    assert_eq!(g.as_slice()[bias.offset], 0.0);
    assert_ne!(g.as_slice()[bias.offset + 1], 0.0);
}

/// Mean of the estimator over all mask sequences, weighted by their exact probabilities.
fn enumerated_estimator_mean(
    params: &ModelParams,
    x: &[f64],
    label: usize,
    costs: &CostVector,
    lambda: f64,
    baseline: f64,
) -> Vec<f64> {
    let spec = params.spec();
    let mut mean = vec![0.0; params.len()];
    for masks in all_mask_sequences(spec.n_features, spec.steps) {
        let path = forward_path(params, x, &masks);
        let prob = path.probability(&masks);
        let weight = path.loss(label) - baseline;
        let g = rollout_gradient(params, x, label, costs, &masks, weight, lambda)
            .unwrap()
            .total();
        for (m, v) in mean.iter_mut().zip(g.as_slice()) {
            *m += prob * v;
        }
    }
    mean
}

#[test]
fn exact_estimator_mean_is_the_gradient_of_the_expected_loss() {
    for cell in [CellType::Rnn, CellType::Gru] {
        let params = tiny(cell, 2, 3, 2, 21);
        let x = [0.8, -0.5];
        let costs = CostVector::new(vec![0.3, 1.0]).unwrap();
        let mean = enumerated_estimator_mean(&params, &x, 1, &costs, 0.0, 0.0);
        let target = central_difference(
            |v| expected_objective(&with_values(&params, v), &x, 1, &costs, 0.0),
            params.values(),
            FD_STEP,
        );
        let err = max_relative_error(&mean, &target, FD_FLOOR);
        assert!(err < 1e-6, "{cell:?}: relative error {err:e}");
    }
}

#[test]
fn exact_estimator_mean_with_cost_is_the_pathwise_cost_gradient() {
    let params = tiny(CellType::Gru, 2, 3, 2, 5);
    let x = [-0.3, 1.1];
    let costs = CostVector::new(vec![0.1, 1.0]).unwrap();
    let lambda = 0.5;
    let mean = enumerated_estimator_mean(&params, &x, 0, &costs, lambda, 0.0);
    let target = central_difference(
        |v| pathwise_cost_objective(&with_values(&params, v), &params, &x, 0, &costs, lambda),
        params.values(),
        FD_STEP,
    );
    assert!(max_relative_error(&mean, &target, FD_FLOOR) < 1e-6);
}

#[test]
fn single_step_cost_term_is_exactly_unbiased() {
    let params = tiny(CellType::Rnn, 2, 3, 1, 8);
    let x = [0.5, 0.5];
    let costs = CostVector::new(vec![0.4, 0.9]).unwrap();
    let mean = enumerated_estimator_mean(&params, &x, 1, &costs, 3.0, 0.0);
    let target = central_difference(
        |v| expected_objective(&with_values(&params, v), &x, 1, &costs, 3.0),
        params.values(),
        FD_STEP,
    );
    assert!(max_relative_error(&mean, &target, FD_FLOOR) < 1e-6);
}

#[test]
fn constant_baseline_leaves_the_mean_unchanged() {
    let params = tiny(CellType::Gru, 2, 3, 2, 13);
    let x = [1.3, 0.2];
    let costs = CostVector::new(vec![1.0, 1.0]).unwrap();
    let plain = enumerated_estimator_mean(&params, &x, 0, &costs, 0.2, 0.0);
    let shifted = enumerated_estimator_mean(&params, &x, 0, &costs, 0.2, 0.75);
    assert!(max_relative_error(&plain, &shifted, 1.0) < 1e-12);
}

#[test]
fn sampled_estimates_average_to_the_expected_gradient() {
    let params = tiny(CellType::Rnn, 2, 3, 2, 3);
    let x = [0.9, -0.7];
    let costs = CostVector::new(vec![0.5, 0.5]).unwrap();
    let cfg = TrainConfig {
        steps: 2,
        repr_dim: 3,
        cell: CellType::Rnn,
        ..TrainConfig::default()
    };
    let (mean, se) = monte_carlo_gradient(&params, &x, 1, &costs, &cfg, 20_000, 77);
    let target = central_difference(
        |v| expected_objective(&with_values(&params, v), &x, 1, &costs, 0.0),
        params.values(),
        FD_STEP,
    );
    let bad = outside_band(&mean, &se, &target, 4.0, 1e-9);
    assert!(bad.is_empty(), "coordinates outside 4 SE: {bad:?}");
}
