//! Surrogate objective, gradient estimator and the minibatch training loop.
//!
//! For one sampled episode with masks `a_t`, policy outputs `probs_t` and
//! prediction loss `D`, the estimator returns the exact gradient of
//!
//! ```text
//! S = w * sum_t log Pr(a_t | probs_t) + D + lambda * sum_t sum_i probs_ti * c_i
//! ```
//!
//! where `w = D - b` is treated as a constant and the masks are held fixed.
//! The first summand is the likelihood-ratio (score-function) term, the other
//! two are differentiated pathwise through the recurrence. `b` is zero unless
//! the moving-average baseline is enabled. Estimates are averaged over `M`
//! rollouts per example and over the examples of a minibatch.

mod backprop;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{replay_rollout, sample_rollout, AcquisitionTrace};
use crate::data::{CostVector, Dataset};
use crate::error::{Diverged, Error, Result};
use crate::evaluation::evaluate;
use crate::model::{init_params, CellType, ModelParams, ModelSpec};
use crate::rng::{self, Purpose};
use backprop::{backward, Seeds};

/// Update rule applied to the averaged gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Momentum {
        #[serde(default = "default_momentum")]
        beta: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

/// Training hyperparameters. Every field can be set from a JSON object;
/// missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the acquisition cost against the prediction loss.
    pub lambda: f64,
    pub steps: usize,
    pub repr_dim: usize,
    /// Rollouts per example per gradient estimate.
    pub rollouts: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub cell: CellType,
    pub epsilon_clamp: f64,
    pub seed: u64,
    pub baseline_enabled: bool,
    /// Decay of the exponential moving average used as baseline.
    pub baseline_decay: f64,
    pub grad_clip_norm: Option<f64>,
    pub shared_policy: bool,
    /// Uniform init half-width; `None` means `1/sqrt(fan_in)` per matrix.
    pub init_scale: Option<f64>,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.0,
            steps: 3,
            repr_dim: 20,
            rollouts: 1,
            learning_rate: 0.05,
            epochs: 100,
            batch_size: 16,
            cell: CellType::Gru,
            epsilon_clamp: 1e-6,
            seed: 0,
            baseline_enabled: false,
            baseline_decay: 0.9,
            grad_clip_norm: Some(5.0),
            shared_policy: false,
            init_scale: None,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be a nonnegative number, got {}", self.lambda));
        }
        if self.rollouts == 0 || self.steps == 0 || self.repr_dim == 0 || self.batch_size == 0 {
            return bad("rollouts, steps, repr_dim and batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.epsilon_clamp > 0.0 && self.epsilon_clamp < 0.5) {
            return bad(format!(
                "epsilon_clamp must lie in (0, 0.5), got {}",
                self.epsilon_clamp
            ));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad(format!(
                "baseline_decay must lie in [0, 1), got {}",
                self.baseline_decay
            ));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        match self.optimizer {
            Optimizer::Sgd => {}
            Optimizer::Momentum { beta } if (0.0..1.0).contains(&beta) => {}
            Optimizer::Adam { beta1, beta2, eps }
                if (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 => {}
            ref o => return bad(format!("invalid optimizer settings {o:?}")),
        }
        Ok(())
    }

    pub fn model_spec(&self, n_features: usize, n_classes: usize) -> ModelSpec {
        ModelSpec {
            cell: self.cell,
            n_features,
            n_classes,
            repr_dim: self.repr_dim,
            steps: self.steps,
            shared_policy: self.shared_policy,
            epsilon: self.epsilon_clamp,
        }
    }
}

/// Gradient with the same flat layout as [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    values: Vec<f64>,
}

impl GradientEstimate {
    pub fn zeros(len: usize) -> Self {
        GradientEstimate { values: vec![0.0; len] }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        GradientEstimate { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn add_scaled(&mut self, other: &[f64], scale: f64) {
        for (a, b) in self.values.iter_mut().zip(other) {
            *a += scale * b;
        }
    }

    fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }
}

/// Squared error between the scores and the one-hot target, and its gradient.
pub fn loss_delta(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let grad = scores
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let r = s - if k == label { 1.0 } else { 0.0 };
            loss += r * r;
            2.0 * r
        })
        .collect();
    (loss, grad)
}

/// Prediction loss plus `lambda` times the cost of every acquisition event.
pub fn surrogate_objective(trace: &AcquisitionTrace, label: usize, lambda: f64) -> f64 {
    loss_delta(&trace.scores, label).0 + lambda * trace.surrogate_cost
}

fn log_likelihood(trace: &AcquisitionTrace) -> f64 {
    trace
        .probs
        .iter()
        .zip(&trace.masks)
        .flat_map(|(probs, mask)| probs.iter().zip(mask))
        .map(|(&p, &a)| if a { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

/// Per-rollout scalar whose gradient the estimator computes, for a fixed
/// mask sequence and a fixed score weight.
pub fn rollout_scalar(
    params: &ModelParams,
    x: &[f64],
    label: usize,
    costs: &CostVector,
    masks: &[Vec<bool>],
    score_weight: f64,
    lambda: f64,
) -> Result<f64> {
    let trace = replay_rollout(params, x, costs, masks)?.trace;
    let expected_cost: f64 = trace
        .probs
        .iter()
        .map(|probs| probs.iter().zip(costs.as_slice()).map(|(p, c)| p * c).sum::<f64>())
        .sum();
    Ok(score_weight * log_likelihood(&trace) + loss_delta(&trace.scores, label).0 + lambda * expected_cost)
}

/// Gradient of [`rollout_scalar`], split by summand.
#[derive(Clone, Debug)]
pub struct TermGradients {
    pub score: GradientEstimate,
    pub loss: GradientEstimate,
    pub cost: GradientEstimate,
}

impl TermGradients {
    pub fn total(&self) -> GradientEstimate {
        let mut g = self.score.clone();
        g.add_scaled(self.loss.as_slice(), 1.0);
        g.add_scaled(self.cost.as_slice(), 1.0);
        g
    }
}

fn term_gradients(
    params: &ModelParams,
    rollout: &crate::acquisition::Rollout,
    label: usize,
    costs: &CostVector,
    score_weight: f64,
    lambda: f64,
) -> TermGradients {
    let run = |score_weight, loss_scale, cost_scale| {
        GradientEstimate::from_values(backward(
            params,
            rollout,
            label,
            costs,
            Seeds {
                score_weight,
                loss_scale,
                cost_scale,
            },
        ))
    };
    TermGradients {
        score: run(score_weight, 0.0, 0.0),
        loss: run(0.0, 1.0, 0.0),
        cost: run(0.0, 0.0, lambda),
    }
}

/// Reverse-mode gradient of [`rollout_scalar`].
pub fn rollout_gradient(
    params: &ModelParams,
    x: &[f64],
    label: usize,
    costs: &CostVector,
    masks: &[Vec<bool>],
    score_weight: f64,
    lambda: f64,
) -> Result<TermGradients> {
    let rollout = replay_rollout(params, x, costs, masks)?;
    Ok(term_gradients(params, &rollout, label, costs, score_weight, lambda))
}

/// Per-example estimator output besides the gradient itself.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeDiagnostics {
    /// Prediction loss of each rollout.
    pub deltas: Vec<f64>,
    /// Surrogate objective of each rollout.
    pub objectives: Vec<f64>,
    pub eval_costs: Vec<f64>,
    /// Norms of the rollout-averaged score, prediction-loss and cost terms.
    pub score_norm: f64,
    pub loss_norm: f64,
    pub cost_norm: f64,
}

impl std::fmt::Display for EpisodeDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "score term norm {:.4e}, loss term norm {:.4e}, cost term norm {:.4e}, rollout losses {:?}",
            self.score_norm, self.loss_norm, self.cost_norm, self.deltas
        )
    }
}

/// Monte-Carlo gradient estimate for one example, averaged over `cfg.rollouts` episodes.
///
/// `baseline` is subtracted from each rollout's loss in the score weight when
/// `cfg.baseline_enabled` is set and ignored otherwise.
pub fn episode_gradient<R: Rng + ?Sized>(
    params: &ModelParams,
    x: &[f64],
    label: usize,
    costs: &CostVector,
    cfg: &TrainConfig,
    baseline: f64,
    rng: &mut R,
) -> Result<(GradientEstimate, EpisodeDiagnostics)> {
    let b = if cfg.baseline_enabled { baseline } else { 0.0 };
    let len = params.len();
    let mut score = GradientEstimate::zeros(len);
    let mut loss = GradientEstimate::zeros(len);
    let mut cost = GradientEstimate::zeros(len);
    let mut diag = EpisodeDiagnostics::default();
    for _ in 0..cfg.rollouts {
        let rollout = sample_rollout(params, x, costs, rng)?;
        let delta = loss_delta(&rollout.trace.scores, label).0;
        let terms = term_gradients(params, &rollout, label, costs, delta - b, cfg.lambda);
        score.add_scaled(terms.score.as_slice(), 1.0);
        loss.add_scaled(terms.loss.as_slice(), 1.0);
        cost.add_scaled(terms.cost.as_slice(), 1.0);
        diag.deltas.push(delta);
        diag.objectives.push(delta + cfg.lambda * rollout.trace.surrogate_cost);
        diag.eval_costs.push(rollout.trace.eval_cost);
    }
    let m = 1.0 / cfg.rollouts as f64;
    for g in [&mut score, &mut loss, &mut cost] {
        g.scale(m);
    }
    diag.score_norm = score.norm();
    diag.loss_norm = loss.norm();
    diag.cost_norm = cost.norm();
    score.add_scaled(loss.as_slice(), 1.0);
    score.add_scaled(cost.as_slice(), 1.0);
    if !score.is_finite() {
        return Err(Error::Divergence(format!("non-finite gradient ({diag})")));
    }
    Ok((score, diag))
}

/// Rescale `grad` in place to at most `max_norm`; returns the norm before clipping.
pub fn clip_gradient(grad: &mut GradientEstimate, max_norm: Option<f64>) -> f64 {
    let norm = grad.norm();
    if let Some(max) = max_norm {
        if norm > max {
            grad.scale(max / norm);
        }
    }
    norm
}

/// Plain gradient descent step with optional global-norm clipping.
pub fn sgd_step(params: &mut ModelParams, grad: &GradientEstimate, cfg: &TrainConfig) {
    assert_eq!(params.len(), grad.len(), "gradient shape mismatch");
    let mut g = grad.clone();
    clip_gradient(&mut g, cfg.grad_clip_norm);
    for (w, d) in params.values_mut().iter_mut().zip(g.as_slice()) {
        *w -= cfg.learning_rate * d;
    }
}

/// Optimizer with its running state.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    optimizer: Optimizer,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, len: usize) -> Self {
        OptimizerState {
            optimizer,
            first: vec![0.0; len],
            second: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &GradientEstimate, cfg: &TrainConfig) {
        let lr = cfg.learning_rate;
        match self.optimizer {
            Optimizer::Sgd => sgd_step(params, grad, cfg),
            Optimizer::Momentum { beta } => {
                let mut g = grad.clone();
                clip_gradient(&mut g, cfg.grad_clip_norm);
                for ((w, v), d) in params.values_mut().iter_mut().zip(&mut self.first).zip(g.as_slice()) {
                    *v = beta * *v + d;
                    *w -= lr * *v;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let mut g = grad.clone();
                clip_gradient(&mut g, cfg.grad_clip_norm);
                self.steps += 1;
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                let values = params.values_mut().iter_mut();
                for (((w, m), v), d) in values.zip(&mut self.first).zip(&mut self.second).zip(g.as_slice()) {
                    *m = beta1 * *m + (1.0 - beta1) * d;
                    *v = beta2 * *v + (1.0 - beta2) * d * d;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Exponential moving average of recent rollout losses.
#[derive(Clone, Debug)]
pub struct Baseline {
    value: Option<f64>,
    decay: f64,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Baseline { value: None, decay }
    }

    pub fn value(&self) -> f64 {
        self.value.unwrap_or(0.0)
    }

    pub fn update(&mut self, delta: f64) {
        self.value = Some(match self.value {
            None => delta,
            Some(v) => self.decay * v + (1.0 - self.decay) * delta,
        });
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean sampled surrogate objective over the epoch's training rollouts.
    pub train_objective: f64,
    pub valid_accuracy: f64,
    pub valid_mean_cost: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_objective,valid_accuracy,valid_mean_cost\n");
    for r in history {
        writeln!(
            out,
            "{},{},{},{}",
            r.epoch, r.train_objective, r.valid_accuracy, r.valid_mean_cost
        )
        .unwrap();
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

/// Minibatch training from a seeded initialization.
///
/// Each epoch shuffles the training rows with the `Shuffle` stream of
/// `cfg.seed`; each example draws its rollouts from a stream keyed by
/// `(epoch, row id)`, and batch gradients are summed in batch order, so the
/// result does not depend on the number of worker threads. After every epoch
/// the model is evaluated once per validation example with `cfg.seed` as the
/// evaluation seed.
pub fn train(train_set: &Dataset, valid_set: &Dataset, costs: &CostVector, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = cfg.model_spec(train_set.n_features(), train_set.n_classes());
    let params = init_params(spec, cfg.seed, cfg.init_scale)?;
    train_from(params, train_set, valid_set, costs, cfg)
}

/// Continue training from given parameters.
pub fn train_from(
    mut params: ModelParams,
    train_set: &Dataset,
    valid_set: &Dataset,
    costs: &CostVector,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = train_set.n_features();
    if valid_set.n_features() != n || costs.len() != n || params.spec().n_features != n {
        return Err(Error::InvalidDimensions(
            "training set, validation set, costs and model disagree on the feature count".into(),
        ));
    }
    if train_set.is_empty() {
        return Err(Error::InvalidDataset("empty training set".into()));
    }
    let mut optimizer = OptimizerState::new(cfg.optimizer.clone(), params.len());
    let mut baseline = Baseline::new(cfg.baseline_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, Purpose::Shuffle, &[epoch as u64]));
        let mut objective_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = baseline.value();
            let results: Vec<Result<(GradientEstimate, EpisodeDiagnostics)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = rng::stream(cfg.seed, Purpose::Train, &[epoch as u64, train_set.row_id(i) as u64]);
                    episode_gradient(&params, train_set.row(i), train_set.label(i), costs, cfg, b, &mut rng)
                })
                .collect();
            let mut grad = GradientEstimate::zeros(params.len());
            for result in results {
                let (g, diag) = result.map_err(|e| diverged(epoch, &params, e.to_string()))?;
                grad.add_scaled(g.as_slice(), 1.0);
                objective_sum += diag.objectives.iter().sum::<f64>() / diag.objectives.len() as f64;
                for d in diag.deltas {
                    baseline.update(d);
                }
            }
            grad.scale(1.0 / batch.len() as f64);
            let checkpoint = params.clone();
            optimizer.step(&mut params, &grad, cfg);
            if !params.is_finite() {
                return Err(diverged(
                    epoch,
                    &checkpoint,
                    format!("non-finite parameters after update (gradient norm {})", grad.norm()),
                ));
            }
        }
        let point =
            evaluate(&params, valid_set, costs, cfg.seed, 1).map_err(|e| diverged(epoch, &params, e.to_string()))?;
        history.push(EpochRecord {
            epoch,
            train_objective: objective_sum / train_set.len() as f64,
            valid_accuracy: point.accuracy,
            valid_mean_cost: point.mean_cost,
        });
        log::debug!(
            "epoch {epoch}: objective {:.5} valid acc {:.4} cost {:.4}",
            objective_sum / train_set.len() as f64,
            point.accuracy,
            point.mean_cost
        );
    }
    Ok(TrainOutcome { params, history })
}

fn diverged(epoch: usize, checkpoint: &ModelParams, diagnostics: String) -> Error {
    Error::TrainingDiverged(Box::new(Diverged {
        epoch,
        checkpoint: checkpoint.clone(),
        diagnostics,
    }))
}
