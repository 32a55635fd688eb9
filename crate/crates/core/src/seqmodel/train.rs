use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::ModelParams;
use super::vocab::{ConditioningContext, TokenSequence};
use super::SequenceModel;
use crate::error::{Result, RioError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, n: usize) -> Self {
        AdamW { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One descent step on `params` along `grad` (gradient of the loss).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * params[i]);
        }
    }
}

/// A supervised (context, ground-truth continuation) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub ctx: ConditioningContext,
    pub target: TokenSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { steps: 5000, lr: 3e-3, batch_size: 16, weight_decay: 0.01, seed: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ModelParams,
    /// Per-step mean token negative log-likelihood of the minibatch.
    pub losses: Vec<f64>,
}

/// Steps after which a loss above 10x the initial loss counts as divergence.
pub(crate) const DIVERGENCE_PATIENCE: usize = 50;

/// Tracks the "loss above 10x the initial loss for 50 consecutive steps" rule.
#[derive(Debug, Clone, Default)]
pub(crate) struct DivergenceGuard {
    initial: Option<f64>,
    streak: usize,
}

impl DivergenceGuard {
    pub(crate) fn observe(&mut self, step: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(RioError::Numerical { index: step, detail: format!("non-finite training loss {loss}") });
        }
        let initial = *self.initial.get_or_insert(loss);
        if loss > 10.0 * initial.abs() {
            self.streak += 1;
            if self.streak >= DIVERGENCE_PATIENCE {
                return Err(RioError::Diverged { step, loss, initial });
            }
        } else {
            self.streak = 0;
        }
        Ok(())
    }
}

/// Mean per-token NLL over `examples` and its gradient.
pub(crate) fn nll_and_grad(params: &ModelParams, examples: &[&TrainingExample]) -> Result<(f64, Vec<f64>)> {
    let tokens: usize = examples.iter().map(|e| e.target.len() + 1).sum();
    let scale = -1.0 / tokens as f64;
    let parts: Vec<(f64, Vec<f64>)> = examples
        .par_iter()
        .map(|e| {
            let mut g = params.zero_grad();
            let trace = params.log_likelihood_with_grad(&e.ctx, e.target.tokens(), scale, &mut g)?;
            Ok((trace.total, g))
        })
        .collect::<Result<_>>()?;
    let mut grad = params.zero_grad();
    let mut total = 0.0;
    for (lp, g) in parts {
        total += lp;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((-total / tokens as f64, grad))
}

/// Mean per-token NLL of a corpus (no gradient).
pub fn mean_nll<M: SequenceModel>(model: &M, corpus: &[TrainingExample]) -> Result<f64> {
    let parts: Vec<(f64, usize)> = corpus
        .par_iter()
        .map(|e| Ok((model.score(&e.ctx, e.target.tokens())?.total, e.target.len() + 1)))
        .collect::<Result<_>>()?;
    let (lp, n) = parts.iter().fold((0.0, 0), |(a, b), (x, y)| (a + x, b + y));
    Ok(-lp / n as f64)
}

/// Teacher-forced maximum-likelihood training with AdamW on random
/// minibatches drawn with replacement.
pub fn pretrain(params: &ModelParams, corpus: &[TrainingExample], cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    if corpus.is_empty() {
        return Err(RioError::precondition("pretraining corpus is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(RioError::precondition("batch_size must be positive"));
    }
    let mut params = params.clone();
    let mut opt = AdamW::new(
        AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() },
        params.num_params(),
    );
    let mut rng = crate::seed::stage_rng(cfg.seed, "pretrain", 0);
    let mut guard = DivergenceGuard::default();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<&TrainingExample> =
            (0..cfg.batch_size).map(|_| &corpus[rng.gen_range(0..corpus.len())]).collect();
        let (loss, grad) = nll_and_grad(&params, &batch)?;
        guard.observe(step, loss)?;
        losses.push(loss);
        opt.step(params.flat_mut(), &grad);
    }
    Ok(PretrainOutcome { params, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_moves_against_gradient() {
        let mut p = vec![1.0, -1.0];
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() }, 2);
        opt.step(&mut p, &[2.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-9 && (p[1] + 0.9).abs() < 1e-9);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut p = vec![2.0];
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() }, 1);
        opt.step(&mut p, &[0.0]);
        assert!((p[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn divergence_guard_trips_after_patience() {
        let mut g = DivergenceGuard::default();
        g.observe(0, 1.0).unwrap();
        for s in 1..DIVERGENCE_PATIENCE {
            g.observe(s, 11.0).unwrap();
        }
        assert!(matches!(g.observe(DIVERGENCE_PATIENCE, 11.0), Err(RioError::Diverged { .. })));
        let mut g = DivergenceGuard::default();
        g.observe(0, 1.0).unwrap();
        for s in 1..200 {
            g.observe(s, if s % 40 == 0 { 1.0 } else { 20.0 }).unwrap();
        }
    }
}
