//! Reference implementations for testing `featacq`.
//!
//! Nothing here calls the library's gradient code. Expectations are
//! computed by enumerating every mask sequence with the public forward
//! primitives, and derivatives by central finite differences.

use featacq::data::{CostVector, Dataset};
use featacq::evaluation::ParetoPoint;
use featacq::model::{masked_input, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Five-point central difference of `f` at `x`, one coordinate at a time.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let mut at = |d: f64| {
                probe[i] = x[i] + d;
                let v = f(&probe);
                probe[i] = x[i];
                v
            };
            (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
        })
        .collect()
}

/// Largest per-coordinate `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn with_values(params: &ModelParams, values: &[f64]) -> ModelParams {
    ModelParams::from_values(params.spec().clone(), values.to_vec()).expect("same shape")
}

/// Every sequence of `steps` masks over `n` features, `2^(n * steps)` in total.
pub fn all_mask_sequences(n: usize, steps: usize) -> Vec<Vec<Vec<bool>>> {
    let bits = n * steps;
    assert!(bits < 24, "too many sequences to enumerate");
    (0..1usize << bits)
        .map(|code| {
            (0..steps)
                .map(|t| (0..n).map(|i| code >> (t * n + i) & 1 == 1).collect())
                .collect()
        })
        .collect()
}

/// Forward pass along a fixed mask sequence.
#[derive(Clone, Debug)]
pub struct Path {
    pub probs: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
}

pub fn forward_path(params: &ModelParams, x: &[f64], masks: &[Vec<bool>]) -> Path {
    let mut z = vec![0.0; params.spec().repr_dim];
    let mut probs = Vec::with_capacity(masks.len());
    for (t, mask) in masks.iter().enumerate() {
        probs.push(params.policy_probs(t, &z));
        z = params.aggregate(&z, &masked_input(x, mask));
    }
    Path {
        probs,
        scores: params.predict_scores(&z),
    }
}

impl Path {
    pub fn probability(&self, masks: &[Vec<bool>]) -> f64 {
        self.probs
            .iter()
            .zip(masks)
            .flat_map(|(p, m)| p.iter().zip(m))
            .map(|(&p, &a)| if a { p } else { 1.0 - p })
            .product()
    }

    pub fn loss(&self, label: usize) -> f64 {
        self.scores
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let target = if k == label { 1.0 } else { 0.0 };
                (s - target).powi(2)
            })
            .sum()
    }

    /// `sum_t sum_i probs_ti c_i` along this path.
    pub fn expected_step_cost(&self, costs: &[f64]) -> f64 {
        self.probs
            .iter()
            .map(|p| p.iter().zip(costs).map(|(p, c)| p * c).sum::<f64>())
            .sum()
    }
}

/// Cost of every acquisition event along a mask sequence.
pub fn event_cost(masks: &[Vec<bool>], costs: &[f64]) -> f64 {
    masks
        .iter()
        .flat_map(|m| m.iter().zip(costs))
        .filter(|(&a, _)| a)
        .map(|(_, c)| c)
        .sum()
}

/// Cost of the union of all masks.
pub fn union_cost(masks: &[Vec<bool>], costs: &[f64]) -> f64 {
    (0..costs.len())
        .filter(|&i| masks.iter().any(|m| m[i]))
        .map(|i| costs[i])
        .sum()
}

/// Exact `E[loss + lambda * event cost]` by enumeration.
pub fn expected_objective(params: &ModelParams, x: &[f64], label: usize, costs: &CostVector, lambda: f64) -> f64 {
    let spec = params.spec();
    all_mask_sequences(spec.n_features, spec.steps)
        .iter()
        .map(|masks| {
            let path = forward_path(params, x, masks);
            path.probability(masks) * (path.loss(label) + lambda * event_cost(masks, costs.as_slice()))
        })
        .sum()
}

/// `E_theta[loss] + lambda * sum_seq P_frozen(seq) * sum_t probs_theta(seq) . c`.
///
/// Its derivative at `theta = frozen` is the mean of a per-rollout
/// estimator that treats the cost penalty pathwise with masks held fixed.
pub fn pathwise_cost_objective(
    params: &ModelParams,
    frozen: &ModelParams,
    x: &[f64],
    label: usize,
    costs: &CostVector,
    lambda: f64,
) -> f64 {
    let spec = params.spec();
    all_mask_sequences(spec.n_features, spec.steps)
        .iter()
        .map(|masks| {
            let path = forward_path(params, x, masks);
            let weight = forward_path(frozen, x, masks).probability(masks);
            path.probability(masks) * path.loss(label) + lambda * weight * path.expected_step_cost(costs.as_slice())
        })
        .sum()
}

/// Exact expected union cost of one episode.
pub fn expected_union_cost(params: &ModelParams, x: &[f64], costs: &CostVector) -> f64 {
    let spec = params.spec();
    all_mask_sequences(spec.n_features, spec.steps)
        .iter()
        .map(|masks| forward_path(params, x, masks).probability(masks) * union_cost(masks, costs.as_slice()))
        .sum()
}

/// Quadratic-time Pareto front: points no other point dominates; among
/// identical points the smallest `model_id` survives. Sorted by id.
pub fn brute_force_front(points: &[ParetoPoint], cost: impl Fn(&ParetoPoint) -> f64) -> Vec<String> {
    let mut ids: Vec<String> = points
        .iter()
        .filter(|p| {
            !points.iter().any(|q| {
                let (cq, cp) = (cost(q), cost(p));
                let weak = cq <= cp && q.accuracy >= p.accuracy;
                let strict = cq < cp || q.accuracy > p.accuracy;
                let same = cq == cp && q.accuracy == p.accuracy;
                (weak && strict) || (same && q.model_id < p.model_id)
            })
        })
        .map(|p| p.model_id.clone())
        .collect();
    ids.sort();
    ids.dedup();
    ids
}

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Standard normal features; the label is `1{sum of the informative features > 0}`.
pub fn linear_task(rows: usize, n: usize, informative: &[usize], seed: u64) -> Dataset {
    let features = normal_matrix(rows, n, seed);
    let labels = features
        .chunks(n)
        .map(|x| usize::from(informative.iter().map(|&i| x[i]).sum::<f64>() > 0.0))
        .collect();
    Dataset::new(features, labels, n, 2).expect("valid synthetic data")
}

/// Four features: 0 and 1 are equally noisy copies of the latent that sets
/// the label, 2 and 3 are pure noise.
pub fn redundant_task(rows: usize, seed: u64) -> Dataset {
    let raw = normal_matrix(rows, 5, seed);
    let mut features = Vec::with_capacity(rows * 4);
    let mut labels = Vec::with_capacity(rows);
    for r in raw.chunks(5) {
        let s = r[0];
        features.extend([s + 0.05 * r[1], s + 0.05 * r[2], r[3], r[4]]);
        labels.push(usize::from(s > 0.0));
    }
    Dataset::new(features, labels, 4, 2).expect("valid synthetic data")
}

/// Per-coordinate mean and standard error of `samples` independent
/// single-rollout estimates, each from its own seeded stream.
pub fn monte_carlo_gradient(
    params: &ModelParams,
    x: &[f64],
    label: usize,
    costs: &CostVector,
    cfg: &featacq::TrainConfig,
    samples: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let len = params.len();
    let mut sum = vec![0.0; len];
    let mut sum_sq = vec![0.0; len];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let (g, _) = featacq::episode_gradient(params, x, label, costs, cfg, 0.0, &mut rng).expect("finite gradient");
        for (k, v) in g.as_slice().iter().enumerate() {
            sum[k] += v;
            sum_sq[k] += v * v;
        }
    }
    let m = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let se = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| ((sq / m - mu * mu).max(0.0) * m / (m - 1.0) / m).sqrt())
        .collect();
    (mean, se)
}

/// Coordinates where `|mean - target| > z * se + abs_tol`.
pub fn outside_band(mean: &[f64], se: &[f64], target: &[f64], z: f64, abs_tol: f64) -> Vec<usize> {
    (0..mean.len())
        .filter(|&k| (mean[k] - target[k]).abs() > z * se[k] + abs_tol)
        .collect()
}
