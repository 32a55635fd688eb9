use std::collections::HashMap;

use super::features::{teacher_forced_features, StepFeatures, StreamState};
use super::vocab::{ConditioningContext, Vocabulary};
use super::SequenceModel;
use crate::error::Result;

/// Count-based model over the same prefix features as the network: the
/// maximum-likelihood table for a corpus, with add-`smoothing` pseudo counts.
#[derive(Debug, Clone)]
pub struct TabularModel {
    vocab: Vocabulary,
    smoothing: f64,
    counts: HashMap<StepFeatures, Vec<f64>>,
}

impl TabularModel {
    pub fn fit<'a, I>(vocab: Vocabulary, smoothing: f64, corpus: I) -> Self
    where
        I: IntoIterator<Item = (&'a ConditioningContext, &'a [u32])>,
    {
        let mut counts: HashMap<StepFeatures, Vec<f64>> = HashMap::new();
        for (ctx, target) in corpus {
            let feats = teacher_forced_features(&vocab, ctx, target);
            for (i, f) in feats.into_iter().enumerate() {
                let slot = target.get(i).map(|&t| t as usize).unwrap_or(vocab.eos_slot());
                counts.entry(f).or_insert_with(|| vec![0.0; vocab.output_size()])[slot] += 1.0;
            }
        }
        TabularModel { vocab, smoothing, counts }
    }

    pub fn num_contexts(&self) -> usize {
        self.counts.len()
    }
}

impl SequenceModel for TabularModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_logits(&self, ctx: &ConditioningContext, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut state = StreamState::new(&self.vocab, ctx);
        for &t in prefix {
            state.push(t);
        }
        let out = self.vocab.output_size();
        Ok(match self.counts.get(&state.features()) {
            Some(c) => c.iter().map(|&n| (n + self.smoothing).ln()).collect(),
            None => vec![0.0; out],
        })
    }
}

/// Emits EOS immediately for every context.
#[derive(Debug, Clone, Copy)]
pub struct SilentModel {
    pub vocab: Vocabulary,
}

impl SequenceModel for SilentModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_logits(&self, _ctx: &ConditioningContext, _prefix: &[u32]) -> Result<Vec<f64>> {
        let mut l = vec![-50.0; self.vocab.output_size()];
        l[self.vocab.eos_slot()] = 0.0;
        Ok(l)
    }
}
