//! The conditional autoregressive model standing in for a codec language
//! model, with exact scoring, sampling, supervised pretraining and gradient
//! checks.

mod checkpoint;
mod decode;
pub mod features;
mod gradcheck;
mod network;
mod tabular;
pub(crate) mod train;
mod vocab;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use decode::{log_likelihood, sample, DecodeConfig, GREEDY_TEMPERATURE};
pub use gradcheck::{check_coordinates, check_gradient, grad_check, relative_error, Objective, SupervisedObjective};
pub use network::{log_sum_exp, ModelConfig, ModelParams};
pub use tabular::{SilentModel, TabularModel};
pub use train::{mean_nll, pretrain, AdamW, AdamWConfig, PretrainConfig, PretrainOutcome, TrainingExample};
pub use vocab::{ConditioningContext, LogProbTrace, TokenSequence, Vocabulary};

use crate::error::Result;

/// Anything that defines `p(next token | context, prefix)` over the acoustic
/// tokens plus EOS.
pub trait SequenceModel: Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Unnormalized log-probabilities (length `vocab.output_size()`, EOS last)
    /// for the token following `prefix`.
    fn next_logits(&self, ctx: &ConditioningContext, prefix: &[u32]) -> Result<Vec<f64>>;

    /// Teacher-forced scoring of `target` followed by EOS. Implementations may
    /// override this with an incremental pass; results must agree with the
    /// step-by-step definition.
    fn score(&self, ctx: &ConditioningContext, target: &[u32]) -> Result<LogProbTrace> {
        let mut steps = Vec::with_capacity(target.len() + 1);
        let eos = self.vocab().eos_slot();
        for i in 0..=target.len() {
            let logits = self.next_logits(ctx, &target[..i])?;
            let slot = if i < target.len() { target[i] as usize } else { eos };
            let lse = log_sum_exp(&logits);
            let lp = logits[slot] - lse;
            if !lp.is_finite() {
                return Err(crate::error::RioError::Numerical { index: i, detail: "non-finite log-probability".into() });
            }
            steps.push(lp.min(0.0));
        }
        Ok(LogProbTrace::from_steps(steps))
    }
}

impl<M: SequenceModel + ?Sized> SequenceModel for &M {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn next_logits(&self, ctx: &ConditioningContext, prefix: &[u32]) -> Result<Vec<f64>> {
        (**self).next_logits(ctx, prefix)
    }

    fn score(&self, ctx: &ConditioningContext, target: &[u32]) -> Result<LogProbTrace> {
        (**self).score(ctx, target)
    }
}
