//! Episode rollout: sample a mask from the policy, fold the newly observed
//! features into the representation, repeat `T` times, then predict.

use std::fmt::Write as _;

use rand::Rng;

use crate::data::CostVector;
use crate::error::{Error, Result};
use crate::model::{masked_input, predict_class, sigmoid, CellCache, ModelParams};

/// One acquisition episode.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionTrace {
    /// `a_1 .. a_T`.
    pub masks: Vec<Vec<bool>>,
    /// Policy output that generated each mask.
    pub probs: Vec<Vec<f64>>,
    /// `z_1 .. z_{T+1}`; `z_1` is zero.
    pub reps: Vec<Vec<f64>>,
    /// Features acquired at least once.
    pub abar: Vec<bool>,
    pub scores: Vec<f64>,
    /// Cost counting every acquisition event.
    pub surrogate_cost: f64,
    /// Cost counting each acquired feature once.
    pub eval_cost: f64,
}

impl AcquisitionTrace {
    /// How many times each feature was acquired.
    pub fn acquisition_counts(&self) -> Vec<usize> {
        let n = self.abar.len();
        (0..n).map(|i| self.masks.iter().filter(|m| m[i]).count()).collect()
    }

    pub fn features_acquired(&self) -> usize {
        self.abar.iter().filter(|&&a| a).count()
    }
}

/// A trace plus what the backward pass needs.
#[derive(Clone, Debug)]
pub(crate) struct Rollout {
    pub trace: AcquisitionTrace,
    pub caches: Vec<CellCache>,
    /// Per step and feature: the sigmoid was inside the clamp band, so the
    /// probability responds to its logit.
    pub active: Vec<Vec<bool>>,
}

/// One independent Bernoulli draw per component, in index order.
///
/// Each component consumes exactly one `f64` from `rng`; the feature is
/// acquired when the draw is below its probability.
pub fn sample_mask<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Vec<bool> {
    probs.iter().map(|&p| rng.random::<f64>() < p).collect()
}

fn rollout_with<F>(params: &ModelParams, x: &[f64], costs: &CostVector, mut choose: F) -> Result<Rollout>
where
    F: FnMut(usize, &[f64]) -> Vec<bool>,
{
    let spec = params.spec();
    let (n, p, steps) = (spec.n_features, spec.repr_dim, spec.steps);
    if x.len() != n || costs.len() != n {
        return Err(Error::InvalidDimensions(format!(
            "model expects {n} features, got {} values and {} costs",
            x.len(),
            costs.len()
        )));
    }
    let eps = spec.epsilon;
    let mut masks = Vec::with_capacity(steps);
    let mut probs = Vec::with_capacity(steps);
    let mut reps = Vec::with_capacity(steps + 1);
    let mut caches = Vec::with_capacity(steps);
    let mut active = Vec::with_capacity(steps);
    reps.push(vec![0.0; p]);
    for t in 0..steps {
        let z = &reps[t];
        let raw: Vec<f64> = params.policy_logits(t, z).into_iter().map(sigmoid).collect();
        active.push(raw.iter().map(|&s| s > eps && s < 1.0 - eps).collect());
        let step_probs: Vec<f64> = raw.iter().map(|s| s.clamp(eps, 1.0 - eps)).collect();
        let mask = choose(t, &step_probs);
        assert_eq!(mask.len(), n);
        let (next, cache) = params.aggregate_cached(z, masked_input(x, &mask));
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite representation at step {}",
                t + 1
            )));
        }
        masks.push(mask);
        probs.push(step_probs);
        caches.push(cache);
        reps.push(next);
    }
    let scores = params.predict_scores(&reps[steps]);
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Divergence("non-finite class scores".into()));
    }
    let c = costs.as_slice();
    let abar: Vec<bool> = (0..n).map(|i| masks.iter().any(|m: &Vec<bool>| m[i])).collect();
    let mut surrogate_cost = 0.0;
    let mut eval_cost = 0.0;
    for i in 0..n {
        let count = masks.iter().filter(|m| m[i]).count();
        surrogate_cost += count as f64 * c[i];
        if abar[i] {
            eval_cost += c[i];
        }
    }
    Ok(Rollout {
        trace: AcquisitionTrace {
            masks,
            probs,
            reps,
            abar,
            scores,
            surrogate_cost,
            eval_cost,
        },
        caches,
        active,
    })
}

pub(crate) fn sample_rollout<R: Rng + ?Sized>(
    params: &ModelParams,
    x: &[f64],
    costs: &CostVector,
    rng: &mut R,
) -> Result<Rollout> {
    rollout_with(params, x, costs, |_, probs| sample_mask(probs, rng))
}

/// Re-run an episode with the masks held fixed.
pub(crate) fn replay_rollout(
    params: &ModelParams,
    x: &[f64],
    costs: &CostVector,
    masks: &[Vec<bool>],
) -> Result<Rollout> {
    if masks.len() != params.spec().steps {
        return Err(Error::InvalidDimensions(format!(
            "{} masks for a {}-step model",
            masks.len(),
            params.spec().steps
        )));
    }
    if masks.iter().any(|m| m.len() != params.spec().n_features) {
        return Err(Error::InvalidDimensions(
            "mask length differs from feature count".into(),
        ));
    }
    rollout_with(params, x, costs, |t, _| masks[t].clone())
}

/// Sample one episode for input `x`.
pub fn run_episode<R: Rng + ?Sized>(
    params: &ModelParams,
    x: &[f64],
    costs: &CostVector,
    rng: &mut R,
) -> Result<AcquisitionTrace> {
    sample_rollout(params, x, costs, rng).map(|r| r.trace)
}

/// Deterministic episode for a given mask sequence.
pub fn replay_episode(
    params: &ModelParams,
    x: &[f64],
    costs: &CostVector,
    masks: &[Vec<bool>],
) -> Result<AcquisitionTrace> {
    replay_rollout(params, x, costs, masks).map(|r| r.trace)
}

/// Predicted class and evaluation cost of one sampled episode.
pub fn predict<R: Rng + ?Sized>(
    params: &ModelParams,
    x: &[f64],
    costs: &CostVector,
    rng: &mut R,
) -> Result<(usize, f64)> {
    let trace = run_episode(params, x, costs, rng)?;
    Ok((predict_class(&trace.scores)?, trace.eval_cost))
}

/// Human-readable dump of an episode.
pub fn format_trace(trace: &AcquisitionTrace, label: Option<usize>) -> String {
    let mut out = String::new();
    for (t, (probs, mask)) in trace.probs.iter().zip(&trace.masks).enumerate() {
        let probs: Vec<String> = probs.iter().map(|p| format!("{p:.4}")).collect();
        let mask: String = mask.iter().map(|&m| if m { '1' } else { '0' }).collect();
        writeln!(out, "step {} probs [{}] mask {}", t + 1, probs.join(" "), mask).unwrap();
    }
    let abar: String = trace.abar.iter().map(|&m| if m { '1' } else { '0' }).collect();
    let scores: Vec<String> = trace.scores.iter().map(|s| format!("{s:.4}")).collect();
    write!(
        out,
        "acquired {} eval_cost {} surrogate_cost {} scores [{}]",
        abar,
        trace.eval_cost,
        trace.surrogate_cost,
        scores.join(" ")
    )
    .unwrap();
    if let Ok(pred) = predict_class(&trace.scores) {
        write!(out, " predicted {pred}").unwrap();
    }
    if let Some(y) = label {
        write!(out, " label {y}").unwrap();
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, CellType, ModelSpec};
    use crate::rng::{self, Purpose};

    fn costs(n: usize) -> CostVector {
        CostVector::new(vec![1.0; n]).unwrap()
    }

    #[test]
    fn near_deterministic_masks() {
        let mut rng = rng::stream(3, Purpose::Eval, &[]);
        for _ in 0..100 {
            assert_eq!(sample_mask(&[1.0 - 1e-12; 5], &mut rng), vec![true; 5]);
            assert_eq!(sample_mask(&[1e-12; 5], &mut rng), vec![false; 5]);
        }
    }

    #[test]
    fn fair_coin_frequencies() {
        let mut rng = rng::stream(11, Purpose::Eval, &[]);
        let draws = 100_000;
        let mut hits = [0usize; 4];
        for _ in 0..draws {
            for (h, m) in hits.iter_mut().zip(sample_mask(&[0.5; 4], &mut rng)) {
                *h += m as usize;
            }
        }
        for h in hits {
            assert!((h as f64 / draws as f64 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn sample_mask_consumes_one_draw_per_feature() {
        let mut a = rng::stream(5, Purpose::Eval, &[]);
        let mut b = rng::stream(5, Purpose::Eval, &[]);
        sample_mask(&[0.5; 7], &mut a);
        for _ in 0..7 {
            b.random::<f64>();
        }
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn empty_acquisition() {
        let spec = ModelSpec::new(3, 2, 4, 1, CellType::Gru);
        let mut params = init_params(spec, 1, None).unwrap();
        params.block_mut("policy0.bias").unwrap().fill(-50.0);
        let mut rng = rng::stream(0, Purpose::Eval, &[]);
        let trace = run_episode(&params, &[1.0, 2.0, 3.0], &costs(3), &mut rng).unwrap();
        assert_eq!(trace.abar, vec![false; 3]);
        assert_eq!(trace.eval_cost, 0.0);
        let z = params.aggregate(&[0.0; 4], &[0.0; 6]);
        assert_eq!(trace.scores, params.predict_scores(&z));
    }

    #[test]
    fn repeated_acquisition_counted_once_in_eval() {
        let spec = ModelSpec::new(1, 2, 2, 2, CellType::Rnn);
        let mut params = init_params(spec, 1, None).unwrap();
        params.block_mut("policy0.bias").unwrap().fill(50.0);
        params.block_mut("policy1.bias").unwrap().fill(50.0);
        params.block_mut("policy1.weight").unwrap().fill(0.0);
        let mut rng = rng::stream(0, Purpose::Eval, &[]);
        let trace = run_episode(&params, &[0.7], &costs(1), &mut rng).unwrap();
        assert_eq!(trace.masks, vec![vec![true], vec![true]]);
        assert_eq!(trace.surrogate_cost, 2.0);
        assert_eq!(trace.eval_cost, 1.0);
        assert_eq!(trace.acquisition_counts(), vec![2]);
    }

    #[test]
    fn fixed_seed_gives_identical_traces() {
        let params = init_params(ModelSpec::new(4, 3, 5, 3, CellType::Gru), 2, None).unwrap();
        let x = [0.3, -1.0, 2.0, 0.0];
        let a = run_episode(&params, &x, &costs(4), &mut rng::stream(9, Purpose::Eval, &[1])).unwrap();
        let b = run_episode(&params, &x, &costs(4), &mut rng::stream(9, Purpose::Eval, &[1])).unwrap();
        assert_eq!(a, b);
        assert_eq!(replay_episode(&params, &x, &costs(4), &a.masks).unwrap(), a);
    }

    #[test]
    fn hand_built_separable_toy() {
        // Feature 0 carries the class sign; the policy always reads it and
        // never reads feature 1. The RNN copies x0 into z; the predictor maps
        // z -> [-z, z].
        let spec = ModelSpec::new(2, 2, 1, 1, CellType::Rnn);
        let mut params = ModelParams::zeros(spec).unwrap();
        params
            .block_mut("policy0.bias")
            .unwrap()
            .copy_from_slice(&[50.0, -50.0]);
        params
            .block_mut("cell.w_in")
            .unwrap()
            .copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        params
            .block_mut("predictor.weight")
            .unwrap()
            .copy_from_slice(&[-1.0, 1.0]);
        let c = CostVector::new(vec![0.3, 2.0]).unwrap();
        let mut rng = rng::stream(1, Purpose::Eval, &[]);
        for (x, y) in [([0.8, 5.0], 1), ([-0.6, -5.0], 0), ([1.5, -3.0], 1)] {
            let (pred, cost) = predict(&params, &x, &c, &mut rng).unwrap();
            assert_eq!(pred, y);
            assert_eq!(cost, 0.3);
        }
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let params = ModelParams::zeros(ModelSpec::new(3, 4, 2, 2, CellType::Gru)).unwrap();
        let mut rng = rng::stream(1, Purpose::Eval, &[]);
        for x in [[1.0, 2.0, 3.0], [-4.0, 0.0, 9.0]] {
            assert_eq!(predict(&params, &x, &costs(3), &mut rng).unwrap().0, 0);
        }
    }

    #[test]
    fn stochastic_costs_vary_with_seed() {
        let params = ModelParams::zeros(ModelSpec::new(6, 2, 2, 2, CellType::Gru)).unwrap();
        let x = [0.0; 6];
        let observed: std::collections::BTreeSet<u64> = (0..20)
            .map(|s| {
                let (_, cost) = predict(&params, &x, &costs(6), &mut rng::stream(s, Purpose::Eval, &[])).unwrap();
                cost.to_bits()
            })
            .collect();
        assert!(observed.len() > 1);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let params = ModelParams::zeros(ModelSpec::new(3, 2, 2, 1, CellType::Rnn)).unwrap();
        let mut rng = rng::stream(1, Purpose::Eval, &[]);
        assert!(matches!(
            run_episode(&params, &[1.0, 2.0], &costs(3), &mut rng),
            Err(Error::InvalidDimensions(_))
        ));
    }

    #[test]
    fn trace_dump_lists_each_step() {
        let params = init_params(ModelSpec::new(2, 2, 2, 2, CellType::Gru), 2, None).unwrap();
        let trace = run_episode(&params, &[1.0, 0.5], &costs(2), &mut rng::stream(0, Purpose::Eval, &[])).unwrap();
        let text = format_trace(&trace, Some(1));
        assert!(text.starts_with("step 1 probs ["));
        assert!(text.contains("step 2 probs ["));
        assert!(text.contains("eval_cost"));
        assert!(text.trim_end().ends_with("label 1"));
    }
}
