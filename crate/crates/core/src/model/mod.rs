//! Parameters and forward pass: recurrent aggregator, per-step Bernoulli
//! policy heads and the linear predictor.
//!
//! All parameters live in one flat `Vec<f64>`. [`Layout`] maps named blocks
//! onto it in a fixed order, which is also the order used for serialization,
//! initialization and gradients:
//!
//! 1. aggregator gates (`rnn`: one gate; `gru`: reset, update, candidate),
//!    each as `w_in` (p x 2n), `w_state` (p x p), `bias` (p);
//! 2. policy heads (T heads, or one when shared), each `weight` (n x p), `bias` (n);
//! 3. predictor `weight` (Y x p), `bias` (Y).
//!
//! Matrices are row-major.

mod io;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub use io::PARAMS_HEADER;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellType {
    Rnn,
    Gru,
}

impl CellType {
    pub fn as_str(self) -> &'static str {
        match self {
            CellType::Rnn => "rnn",
            CellType::Gru => "gru",
        }
    }
}

impl std::str::FromStr for CellType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(CellType::Rnn),
            "gru" => Ok(CellType::Gru),
            _ => Err(Error::InvalidConfig(format!("unknown cell type `{s}`"))),
        }
    }
}

/// Dimensions and fixed hyperparameters of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub cell: CellType,
    pub n_features: usize,
    pub n_classes: usize,
    pub repr_dim: usize,
    pub steps: usize,
    /// One policy head reused at every step instead of one per step.
    pub shared_policy: bool,
    /// Policy probabilities are clamped into `[epsilon, 1 - epsilon]`.
    pub epsilon: f64,
}

impl ModelSpec {
    pub fn new(n_features: usize, n_classes: usize, repr_dim: usize, steps: usize, cell: CellType) -> Self {
        ModelSpec {
            cell,
            n_features,
            n_classes,
            repr_dim,
            steps,
            shared_policy: false,
            epsilon: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidDimensions(m.to_string()));
        if self.n_features == 0 {
            return bad("n_features must be at least 1");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if self.repr_dim == 0 {
            return bad("repr_dim must be at least 1");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return bad("epsilon must lie in (0, 0.5)");
        }
        Ok(())
    }

    pub fn policy_heads(&self) -> usize {
        if self.shared_policy {
            1
        } else {
            self.steps
        }
    }

    /// Policy head used at zero-based `step`.
    pub fn head_for_step(&self, step: usize) -> usize {
        if self.shared_policy {
            0
        } else {
            step
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct GateBlocks {
    pub w_in: usize,
    pub w_state: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LinearBlocks {
    pub weight: usize,
    pub bias: usize,
}

/// A named contiguous region of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_bias(&self) -> bool {
        self.cols == 1
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of every block for a given [`ModelSpec`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub(crate) gates: Vec<GateBlocks>,
    pub(crate) heads: Vec<LinearBlocks>,
    pub(crate) predictor: LinearBlocks,
    blocks: Vec<Block>,
    len: usize,
}

impl Layout {
    pub fn new(spec: &ModelSpec) -> Self {
        let (n, p, y) = (spec.n_features, spec.repr_dim, spec.n_classes);
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            let at = offset;
            blocks.push(Block {
                name,
                rows,
                cols,
                offset: at,
            });
            offset += rows * cols;
            at
        };
        let gate_names: &[&str] = match spec.cell {
            CellType::Rnn => &["cell"],
            CellType::Gru => &["reset", "update", "candidate"],
        };
        let gates = gate_names
            .iter()
            .map(|g| GateBlocks {
                w_in: push(format!("{g}.w_in"), p, 2 * n),
                w_state: push(format!("{g}.w_state"), p, p),
                bias: push(format!("{g}.bias"), p, 1),
            })
            .collect();
        let heads = (0..spec.policy_heads())
            .map(|t| LinearBlocks {
                weight: push(format!("policy{t}.weight"), n, p),
                bias: push(format!("policy{t}.bias"), n, 1),
            })
            .collect();
        let predictor = LinearBlocks {
            weight: push("predictor.weight".into(), y, p),
            bias: push("predictor.bias".into(), y, 1),
        };
        Layout {
            gates,
            heads,
            predictor,
            blocks,
            len: offset,
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Model weights plus the spec they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    spec: ModelSpec,
    layout: Layout,
    values: Vec<f64>,
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        let values = vec![0.0; layout.len()];
        Ok(ModelParams { spec, layout, values })
    }

    pub fn from_values(spec: ModelSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        if values.len() != layout.len() {
            return Err(Error::InvalidDimensions(format!(
                "{} values for a model with {} parameters",
                values.len(),
                layout.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDimensions("parameters must be finite".into()));
        }
        Ok(ModelParams { spec, layout, values })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .blocks()
            .iter()
            .find(|b| b.name == name)
            .map(|b| &self.values[b.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.blocks().iter().find(|b| b.name == name)?.range();
        Some(&mut self.values[range])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.values[offset..offset + len]
    }
}

/// Draw weights uniformly from `[-s, s]` and set biases to zero.
///
/// With `scale = None`, `s` is `1 / sqrt(cols)` for each weight matrix. Blocks
/// are filled in layout order, row-major, from the `Init` stream of `seed`.
pub fn init_params(spec: ModelSpec, seed: u64, scale: Option<f64>) -> Result<ModelParams> {
    if let Some(s) = scale {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidConfig(format!("init scale must be positive, got {s}")));
        }
    }
    let mut params = ModelParams::zeros(spec)?;
    let mut rng = rng::stream(seed, Purpose::Init, &[]);
    let blocks = params.layout.blocks().to_vec();
    for block in blocks.iter().filter(|b| !b.is_bias()) {
        let s = scale.unwrap_or(1.0 / (block.cols as f64).sqrt());
        for v in &mut params.values[block.range()] {
            *v = rng.random_range(-s..=s);
        }
    }
    Ok(params)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += W x` for a row-major `W` of shape `(out.len(), x.len())`.
pub(crate) fn matvec_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W^T g` for a row-major `W` of shape `(g.len(), out.len())`.
pub(crate) fn matvec_t_add(out: &mut [f64], w: &[f64], g: &[f64]) {
    let cols = out.len();
    for (gi, row) in g.iter().zip(w.chunks_exact(cols)) {
        if *gi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += gi * a;
            }
        }
    }
}

/// `W += g x^T`.
pub(crate) fn outer_add(w: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (gi, row) in g.iter().zip(w.chunks_exact_mut(cols)) {
        if *gi != 0.0 {
            for (a, b) in row.iter_mut().zip(x) {
                *a += gi * b;
            }
        }
    }
}

/// `[x * a ; a]`: observed values with zeros elsewhere, followed by the mask.
pub fn masked_input(x: &[f64], mask: &[bool]) -> Vec<f64> {
    assert_eq!(x.len(), mask.len(), "feature/mask length mismatch");
    let mut u = Vec::with_capacity(2 * x.len());
    u.extend(x.iter().zip(mask).map(|(v, &m)| if m { *v } else { 0.0 }));
    u.extend(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    u
}

/// Intermediate values of one cell application, kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub(crate) struct CellCache {
    pub u: Vec<f64>,
    /// GRU reset gate.
    pub reset: Vec<f64>,
    /// GRU update gate.
    pub update: Vec<f64>,
    /// RNN output or GRU candidate state.
    pub cand: Vec<f64>,
    /// reset * z, the state seen by the GRU candidate.
    pub gated_state: Vec<f64>,
}

impl ModelParams {
    fn gate_preact(&self, gate: usize, u: &[f64], z: &[f64]) -> Vec<f64> {
        let p = self.spec.repr_dim;
        let g = self.layout.gates[gate];
        let mut a = self.slice(g.bias, p).to_vec();
        matvec_add(&mut a, self.slice(g.w_in, p * u.len()), u);
        matvec_add(&mut a, self.slice(g.w_state, p * p), z);
        a
    }

    pub(crate) fn aggregate_cached(&self, z: &[f64], u: Vec<f64>) -> (Vec<f64>, CellCache) {
        match self.spec.cell {
            CellType::Rnn => {
                let h: Vec<f64> = self.gate_preact(0, &u, z).into_iter().map(f64::tanh).collect();
                let cache = CellCache {
                    u,
                    cand: h.clone(),
                    ..Default::default()
                };
                (h, cache)
            }
            CellType::Gru => {
                let reset: Vec<f64> = self.gate_preact(0, &u, z).into_iter().map(sigmoid).collect();
                let update: Vec<f64> = self.gate_preact(1, &u, z).into_iter().map(sigmoid).collect();
                let gated_state: Vec<f64> = reset.iter().zip(z).map(|(r, s)| r * s).collect();
                let cand: Vec<f64> = self
                    .gate_preact(2, &u, &gated_state)
                    .into_iter()
                    .map(f64::tanh)
                    .collect();
                let next = z
                    .iter()
                    .zip(&update)
                    .zip(&cand)
                    .map(|((s, q), h)| (1.0 - q) * s + q * h)
                    .collect();
                let cache = CellCache {
                    u,
                    reset,
                    update,
                    cand,
                    gated_state,
                };
                (next, cache)
            }
        }
    }

    /// Fold a masked observation `u` (length 2n) into representation `z`.
    ///
    /// `rnn`: `tanh(W_u u + W_z z + b)`. `gru`: reset `r` and update `q` gates,
    /// candidate `tanh(W_h u + U_h (r * z) + b_h)`, result `(1 - q) z + q h`.
    pub fn aggregate(&self, z: &[f64], u: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.spec.repr_dim);
        assert_eq!(u.len(), 2 * self.spec.n_features);
        self.aggregate_cached(z, u.to_vec()).0
    }

    /// Unclamped policy logits for zero-based `step`.
    pub(crate) fn policy_logits(&self, step: usize, z: &[f64]) -> Vec<f64> {
        let (n, p) = (self.spec.n_features, self.spec.repr_dim);
        let head = self.layout.heads[self.spec.head_for_step(step)];
        let mut logits = self.slice(head.bias, n).to_vec();
        matvec_add(&mut logits, self.slice(head.weight, n * p), z);
        logits
    }

    /// Per-feature acquisition probabilities at zero-based `step`, clamped into `[eps, 1 - eps]`.
    pub fn policy_probs(&self, step: usize, z: &[f64]) -> Vec<f64> {
        assert!(step < self.spec.steps, "step {step} out of range");
        let eps = self.spec.epsilon;
        self.policy_logits(step, z)
            .into_iter()
            .map(|l| sigmoid(l).clamp(eps, 1.0 - eps))
            .collect()
    }

    /// Linear class scores, no activation.
    pub fn predict_scores(&self, z: &[f64]) -> Vec<f64> {
        let (y, p) = (self.spec.n_classes, self.spec.repr_dim);
        let pred = self.layout.predictor;
        let mut scores = self.slice(pred.bias, y).to_vec();
        matvec_add(&mut scores, self.slice(pred.weight, y * p), z);
        scores
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn predict_class(scores: &[f64]) -> Result<usize> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NanScore);
    }
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(cell: CellType) -> ModelSpec {
        ModelSpec::new(3, 2, 4, 2, cell)
    }

    #[test]
    fn gru_parameter_count_matches_closed_form() {
        let (n, y, p, t) = (16, 26, 20, 3);
        let params = init_params(ModelSpec::new(n, y, p, t, CellType::Gru), 0, None).unwrap();
        let expected = 3 * (p * (2 * n) + p * p + p) + t * (p * n + n) + p * y + y;
        assert_eq!(params.len(), expected);
        assert_eq!(expected, 4734);
        let rnn = Layout::new(&ModelSpec::new(n, y, p, t, CellType::Rnn));
        assert_eq!(rnn.len(), (p * (2 * n) + p * p + p) + t * (p * n + n) + p * y + y);
        let mut shared = ModelSpec::new(n, y, p, t, CellType::Gru);
        shared.shared_policy = true;
        assert_eq!(Layout::new(&shared).len(), expected - 2 * (p * n + n));
    }

    #[test]
    fn init_is_seeded_bounded_and_zero_bias() {
        let a = init_params(spec(CellType::Gru), 5, None).unwrap();
        let b = init_params(spec(CellType::Gru), 5, None).unwrap();
        let c = init_params(spec(CellType::Gru), 6, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for block in a.layout().blocks() {
            let vals = &a.values()[block.range()];
            if block.is_bias() {
                assert!(vals.iter().all(|&v| v == 0.0), "{}", block.name);
            } else {
                let s = 1.0 / (block.cols as f64).sqrt();
                assert!(vals.iter().all(|v| v.abs() <= s), "{}", block.name);
            }
        }
        assert!(init_params(spec(CellType::Rnn), 0, Some(0.0)).is_err());
        assert!(init_params(ModelSpec::new(3, 2, 0, 2, CellType::Rnn), 0, None).is_err());
        assert!(init_params(ModelSpec::new(3, 2, 4, 0, CellType::Rnn), 0, None).is_err());
    }

    #[test]
    fn masked_input_examples() {
        assert_eq!(masked_input(&[5.0, 7.0], &[true, false]), vec![5.0, 0.0, 1.0, 0.0]);
        assert_eq!(masked_input(&[5.0, 7.0], &[false, false]), vec![0.0; 4]);
        assert_eq!(masked_input(&[0.0, 3.0], &[true, true]), vec![0.0, 3.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_rnn_maps_to_zero() {
        let params = ModelParams::zeros(spec(CellType::Rnn)).unwrap();
        let z = params.aggregate(&[0.3, -0.2, 0.9, 1.0], &[1.0, 2.0, 3.0, 1.0, 1.0, 1.0]);
        assert_eq!(z, vec![0.0; 4]);
    }

    #[test]
    fn gru_closed_update_gate_keeps_state() {
        let mut params = init_params(spec(CellType::Gru), 3, None).unwrap();
        params.block_mut("update.bias").unwrap().fill(-60.0);
        let z = [0.3, -0.2, 0.9, 0.5];
        let next = params.aggregate(&z, &[1.0, 2.0, 3.0, 1.0, 1.0, 1.0]);
        for (a, b) in next.iter().zip(z) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rnn_output_is_bounded() {
        let params = init_params(spec(CellType::Rnn), 9, Some(3.0)).unwrap();
        let next = params.aggregate(&[5.0, -5.0, 2.0, 0.1], &[10.0, -4.0, 3.0, 1.0, 1.0, 1.0]);
        assert!(next.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn policy_probs_clamp() {
        let mut params = ModelParams::zeros(spec(CellType::Gru)).unwrap();
        assert_eq!(params.policy_probs(0, &[0.0; 4]), vec![0.5; 3]);
        params.block_mut("policy1.bias").unwrap()[2] = 50.0;
        params.block_mut("policy1.bias").unwrap()[0] = -50.0;
        let probs = params.policy_probs(1, &[0.0; 4]);
        assert_eq!(probs, vec![1e-6, 0.5, 1.0 - 1e-6]);
    }

    #[test]
    fn shared_policy_reuses_head() {
        let mut s = spec(CellType::Rnn);
        s.shared_policy = true;
        let params = init_params(s, 1, None).unwrap();
        let z = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(params.policy_probs(0, &z), params.policy_probs(1, &z));
    }

    #[test]
    fn predictor_is_linear() {
        let mut params = init_params(spec(CellType::Rnn), 2, None).unwrap();
        params
            .block_mut("predictor.bias")
            .unwrap()
            .copy_from_slice(&[0.25, -1.5]);
        assert_eq!(params.predict_scores(&[0.0; 4]), vec![0.25, -1.5]);
        params.block_mut("predictor.bias").unwrap().fill(0.0);
        let z = [0.1, -0.7, 0.4, 0.2];
        let z2: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        let (s1, s2) = (params.predict_scores(&z), params.predict_scores(&z2));
        for (a, b) in s1.iter().zip(&s2) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }

        let mut eye = ModelParams::zeros(ModelSpec::new(3, 2, 2, 1, CellType::Rnn)).unwrap();
        eye.block_mut("predictor.weight")
            .unwrap()
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(eye.predict_scores(&[1.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(predict_class(&[0.1, 0.9]).unwrap(), 1);
        assert_eq!(predict_class(&[0.5, 0.5]).unwrap(), 0);
        assert_eq!(predict_class(&[3.0, -1.0, 3.0]).unwrap(), 0);
        assert!(matches!(predict_class(&[0.0, f64::NAN]), Err(Error::NanScore)));
    }
}
