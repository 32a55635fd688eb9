//! The conditional next-token network: per-slot embeddings of the prefix
//! features, `depth` tanh layers of `width` units, and a linear read-out over
//! the acoustic tokens plus EOS.
//!
//! Parameters live in one flat `Vec<f64>` in this fixed order:
//!
//! 1. embedding tables, slot by slot (`rows x embed_dim`, row-major);
//! 2. for each hidden layer: weights (`width x fan_in`, row-major) then bias;
//! 3. read-out weights (`output_size x width`, row-major) then bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{slot_sizes, teacher_forced_features, StepFeatures, StreamState, NUM_SLOTS};
use super::vocab::{ConditioningContext, LogProbTrace, Vocabulary};
use super::SequenceModel;
use crate::error::{Result, RioError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { embed_dim: 32, width: 64, depth: 1, init_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    slot_rows: [usize; NUM_SLOTS],
    slot_offsets: [usize; NUM_SLOTS],
    /// (weight offset, bias offset, fan_in) per hidden layer.
    hidden: Vec<(usize, usize, usize)>,
    out_w: usize,
    out_b: usize,
    total: usize,
}

impl Layout {
    fn new(vocab: &Vocabulary, cfg: &ModelConfig) -> Self {
        let slot_rows = slot_sizes(vocab);
        let mut offset = 0;
        let mut slot_offsets = [0; NUM_SLOTS];
        for (s, rows) in slot_rows.iter().enumerate() {
            slot_offsets[s] = offset;
            offset += rows * cfg.embed_dim;
        }
        let mut hidden = Vec::with_capacity(cfg.depth);
        let mut fan_in = NUM_SLOTS * cfg.embed_dim;
        for _ in 0..cfg.depth {
            let w = offset;
            offset += cfg.width * fan_in;
            let b = offset;
            offset += cfg.width;
            hidden.push((w, b, fan_in));
            fan_in = cfg.width;
        }
        let out_w = offset;
        offset += vocab.output_size() * cfg.width;
        let out_b = offset;
        offset += vocab.output_size();
        Layout { slot_rows, slot_offsets, hidden, out_w, out_b, total: offset }
    }
}

/// All learnable parameters of the conditional model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    vocab: Vocabulary,
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

/// Activations of one step, kept for the backward pass.
struct StepCache {
    input: Vec<f64>,
    hidden: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl ModelParams {
    /// Glorot-uniform weights, uniform embeddings (variance 1/4) and zero biases, all
    /// drawn from `config.init_seed`.
    pub fn init(vocab: Vocabulary, config: ModelConfig) -> Result<Self> {
        if config.embed_dim == 0 || config.width == 0 || config.depth == 0 {
            return Err(RioError::precondition("embed_dim, width and depth must be positive"));
        }
        let layout = Layout::new(&vocab, &config);
        let mut params = vec![0.0; layout.total];
        let mut rng = crate::seed::rng(config.init_seed);
        for s in 0..NUM_SLOTS {
            let start = layout.slot_offsets[s];
            let len = layout.slot_rows[s] * config.embed_dim;
            let scale = (3.0_f64).sqrt() * 0.5;
            for p in &mut params[start..start + len] {
                *p = rng.gen_range(-scale..scale);
            }
        }
        for &(w, _, fan_in) in &layout.hidden {
            let bound = (6.0 / (fan_in + config.width) as f64).sqrt();
            for p in &mut params[w..w + config.width * fan_in] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        let out = vocab.output_size();
        let bound = (6.0 / (config.width + out) as f64).sqrt();
        for p in &mut params[layout.out_w..layout.out_w + out * config.width] {
            *p = rng.gen_range(-bound..bound);
        }
        Ok(ModelParams { vocab, config, layout, params })
    }

    /// All parameters zero: every step predicts the uniform distribution.
    pub fn zeroed(vocab: Vocabulary, config: ModelConfig) -> Self {
        let layout = Layout::new(&vocab, &config);
        let params = vec![0.0; layout.total];
        ModelParams { vocab, config, layout, params }
    }

    /// Rebuild from a flat parameter vector in the documented order.
    pub fn from_flat(vocab: Vocabulary, config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&vocab, &config);
        if params.len() != layout.total {
            return Err(RioError::precondition(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(RioError::precondition(format!("parameter {i} is not finite")));
        }
        Ok(ModelParams { vocab, config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.params
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn forward_step(&self, f: &StepFeatures) -> StepCache {
        let e = self.config.embed_dim;
        let mut input = Vec::with_capacity(NUM_SLOTS * e);
        for (s, &row) in f.iter().enumerate() {
            let start = self.layout.slot_offsets[s] + row * e;
            input.extend_from_slice(&self.params[start..start + e]);
        }
        let width = self.config.width;
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(self.layout.hidden.len());
        for (l, &(w, b, fan_in)) in self.layout.hidden.iter().enumerate() {
            let x: &[f64] = if l == 0 { &input } else { &hidden[l - 1] };
            let mut h = vec![0.0; width];
            for (j, hj) in h.iter_mut().enumerate() {
                let row = &self.params[w + j * fan_in..w + (j + 1) * fan_in];
                let z = self.params[b + j] + dot(row, x);
                *hj = z.tanh();
            }
            hidden.push(h);
        }
        let top = hidden.last().expect("depth >= 1");
        let out = self.vocab.output_size();
        let mut logits = vec![0.0; out];
        for (k, lk) in logits.iter_mut().enumerate() {
            let row = &self.params[self.layout.out_w + k * width..self.layout.out_w + (k + 1) * width];
            *lk = self.params[self.layout.out_b + k] + dot(row, top);
        }
        StepCache { input, hidden, logits }
    }

    /// Accumulate `dlogits` back through one step into `grad`.
    fn backward_step(&self, f: &StepFeatures, cache: &StepCache, dlogits: &[f64], grad: &mut [f64]) {
        let width = self.config.width;
        let top = cache.hidden.last().expect("depth >= 1");
        let mut dh = vec![0.0; width];
        for (k, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[self.layout.out_b + k] += g;
            let w = self.layout.out_w + k * width;
            axpy(g, top, &mut grad[w..w + width]);
            axpy(g, &self.params[w..w + width], &mut dh);
        }
        for l in (0..self.layout.hidden.len()).rev() {
            let (w, b, fan_in) = self.layout.hidden[l];
            let h = &cache.hidden[l];
            let x: &[f64] = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
            let mut dx = vec![0.0; fan_in];
            for j in 0..width {
                let dz = dh[j] * (1.0 - h[j] * h[j]);
                if dz == 0.0 {
                    continue;
                }
                grad[b + j] += dz;
                let row = w + j * fan_in;
                axpy(dz, x, &mut grad[row..row + fan_in]);
                axpy(dz, &self.params[row..row + fan_in], &mut dx);
            }
            dh = dx;
        }
        let e = self.config.embed_dim;
        for (s, &row) in f.iter().enumerate() {
            let start = self.layout.slot_offsets[s] + row * e;
            for d in 0..e {
                grad[start + d] += dh[s * e + d];
            }
        }
    }

    fn step_logp(&self, index: usize, logits: &[f64], target_slot: usize) -> Result<(f64, f64)> {
        let lse = log_sum_exp(logits);
        let logp = logits[target_slot] - lse;
        if !lse.is_finite() || !logp.is_finite() {
            return Err(RioError::Numerical { index, detail: "non-finite logits".into() });
        }
        Ok((logp.min(0.0), lse))
    }

    fn output_slot(&self, token: u32) -> usize {
        token as usize
    }

    /// Exact log-likelihood of `target` followed by EOS, plus the gradient of
    /// `scale * total` accumulated into `grad`.
    pub fn log_likelihood_with_grad(
        &self,
        ctx: &ConditioningContext,
        target: &[u32],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<LogProbTrace> {
        self.sequence_log_likelihood_with_grad(ctx, target, true, scale, grad)
    }

    /// As [`Self::log_likelihood_with_grad`], scoring the closing EOS only
    /// when `terminated` is set (a generation cut off at the length limit
    /// never sampled it).
    pub fn sequence_log_likelihood_with_grad(
        &self,
        ctx: &ConditioningContext,
        target: &[u32],
        terminated: bool,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<LogProbTrace> {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut feats = teacher_forced_features(&self.vocab, ctx, target);
        if !terminated {
            feats.pop();
        }
        let mut steps = Vec::with_capacity(feats.len());
        let mut dlogits = vec![0.0; self.vocab.output_size()];
        for (i, f) in feats.iter().enumerate() {
            let slot = if i < target.len() { self.output_slot(target[i]) } else { self.vocab.eos_slot() };
            let cache = self.forward_step(f);
            let (logp, lse) = self.step_logp(i, &cache.logits, slot)?;
            steps.push(logp);
            if scale != 0.0 {
                for (d, &l) in dlogits.iter_mut().zip(&cache.logits) {
                    *d = -scale * (l - lse).exp();
                }
                dlogits[slot] += scale;
                self.backward_step(f, &cache, &dlogits, grad);
            }
        }
        Ok(LogProbTrace::from_steps(steps))
    }

    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }
}

impl SequenceModel for ModelParams {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_logits(&self, ctx: &ConditioningContext, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut state = StreamState::new(&self.vocab, ctx);
        for &t in prefix {
            state.push(t);
        }
        let cache = self.forward_step(&state.features());
        if cache.logits.iter().any(|l| !l.is_finite()) {
            return Err(RioError::Numerical { index: prefix.len(), detail: "non-finite logits".into() });
        }
        Ok(cache.logits)
    }

    fn score(&self, ctx: &ConditioningContext, target: &[u32]) -> Result<LogProbTrace> {
        let feats = teacher_forced_features(&self.vocab, ctx, target);
        let mut steps = Vec::with_capacity(feats.len());
        for (i, f) in feats.iter().enumerate() {
            let slot = if i < target.len() { self.output_slot(target[i]) } else { self.vocab.eos_slot() };
            let cache = self.forward_step(f);
            steps.push(self.step_logp(i, &cache.logits, slot)?.0);
        }
        Ok(LogProbTrace::from_steps(steps))
    }
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a4, b4) = (a[..n].chunks_exact(4), b[..n].chunks_exact(4));
    let tail: f64 = a4.remainder().iter().zip(b4.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; 4];
    for (x, y) in a4.zip(b4) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a * x`.
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
