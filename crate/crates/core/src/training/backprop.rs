//! Reverse pass through one rollout with the sampled masks held fixed.

use crate::acquisition::Rollout;
use crate::data::CostVector;
use crate::model::{matvec_t_add, outer_add, CellType, ModelParams};

/// Upstream weights of the three summands of the per-rollout scalar.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Seeds {
    /// Constant multiplying the summed Bernoulli log-likelihoods.
    pub score_weight: f64,
    /// Multiplier on the prediction loss.
    pub loss_scale: f64,
    /// Multiplier on `sum_t sum_i probs_ti c_i` (lambda).
    pub cost_scale: f64,
}

/// Gradient of `score_weight * sum_t log Pr(a_t) + loss_scale * loss + cost_scale * sum_t probs_t . c`.
pub(crate) fn backward(
    params: &ModelParams,
    rollout: &Rollout,
    label: usize,
    costs: &CostVector,
    seeds: Seeds,
) -> Vec<f64> {
    let spec = params.spec();
    let layout = params.layout();
    let w = params.values();
    let (n, p, steps) = (spec.n_features, spec.repr_dim, spec.steps);
    let y = spec.n_classes;
    let trace = &rollout.trace;
    let mut grad = vec![0.0; w.len()];
    let mut dz = vec![0.0; p];

    if seeds.loss_scale != 0.0 {
        let pred = layout.predictor;
        let ds: Vec<f64> = trace
            .scores
            .iter()
            .enumerate()
            .map(|(k, s)| seeds.loss_scale * 2.0 * (s - if k == label { 1.0 } else { 0.0 }))
            .collect();
        outer_add(&mut grad[pred.weight..pred.weight + y * p], &ds, &trace.reps[steps]);
        for (g, d) in grad[pred.bias..pred.bias + y].iter_mut().zip(&ds) {
            *g += d;
        }
        matvec_t_add(&mut dz, &w[pred.weight..pred.weight + y * p], &ds);
    }

    let c = costs.as_slice();
    for t in (0..steps).rev() {
        // dz holds d/dz_{t+1}; push it through the cell into d/dz_t.
        let z = &trace.reps[t];
        let mut dz_prev = cell_backward(params, &rollout.caches[t], z, &dz, &mut grad);

        let probs = &trace.probs[t];
        let mask = &trace.masks[t];
        let active = &rollout.active[t];
        let dlogit: Vec<f64> = (0..n)
            .map(|i| {
                if !active[i] {
                    return 0.0;
                }
                let pi = probs[i];
                let a = if mask[i] { 1.0 } else { 0.0 };
                seeds.score_weight * (a - pi) + seeds.cost_scale * c[i] * pi * (1.0 - pi)
            })
            .collect();
        if dlogit.iter().any(|&g| g != 0.0) {
            let head = layout.heads[spec.head_for_step(t)];
            outer_add(&mut grad[head.weight..head.weight + n * p], &dlogit, z);
            for (g, d) in grad[head.bias..head.bias + n].iter_mut().zip(&dlogit) {
                *g += d;
            }
            matvec_t_add(&mut dz_prev, &w[head.weight..head.weight + n * p], &dlogit);
        }
        dz = dz_prev;
    }
    grad
}

/// Accumulate parameter gradients of one cell application and return d/dz (input state).
fn cell_backward(
    params: &ModelParams,
    cache: &crate::model::CellCache,
    z: &[f64],
    dnext: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let p = params.spec().repr_dim;
    let w = params.values();
    let gates = &params.layout().gates;
    let u = &cache.u;
    let m = u.len();
    let mut dz = vec![0.0; p];

    let affine_backward = |gate: usize, da: &[f64], state: &[f64], grad: &mut [f64]| -> Vec<f64> {
        let g = gates[gate];
        outer_add(&mut grad[g.w_in..g.w_in + p * m], da, u);
        outer_add(&mut grad[g.w_state..g.w_state + p * p], da, state);
        for (b, d) in grad[g.bias..g.bias + p].iter_mut().zip(da) {
            *b += d;
        }
        let mut dstate = vec![0.0; p];
        matvec_t_add(&mut dstate, &w[g.w_state..g.w_state + p * p], da);
        dstate
    };

    match params.spec().cell {
        CellType::Rnn => {
            let da: Vec<f64> = dnext.iter().zip(&cache.cand).map(|(d, h)| d * (1.0 - h * h)).collect();
            dz = affine_backward(0, &da, z, grad);
        }
        CellType::Gru => {
            let (r, q, h) = (&cache.reset, &cache.update, &cache.cand);
            let mut dq = vec![0.0; p];
            let mut dh_pre = vec![0.0; p];
            for j in 0..p {
                dz[j] = dnext[j] * (1.0 - q[j]);
                dq[j] = dnext[j] * (h[j] - z[j]);
                dh_pre[j] = dnext[j] * q[j] * (1.0 - h[j] * h[j]);
            }
            let dgated = affine_backward(2, &dh_pre, &cache.gated_state, grad);
            let mut dr_pre = vec![0.0; p];
            for j in 0..p {
                dz[j] += dgated[j] * r[j];
                dr_pre[j] = dgated[j] * z[j] * r[j] * (1.0 - r[j]);
            }
            let dq_pre: Vec<f64> = dq.iter().zip(q).map(|(d, q)| d * q * (1.0 - q)).collect();
            let from_update = affine_backward(1, &dq_pre, z, grad);
            let from_reset = affine_backward(0, &dr_pre, z, grad);
            for j in 0..p {
                dz[j] += from_update[j] + from_reset[j];
            }
        }
    }
    dz
}
